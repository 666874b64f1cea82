//! Diffusion-matrix algebra: `D = B Bᵀ`, the noise-induced (spurious) drift
//! in its two forms, the Itô-equivalent drift and noise symmetrization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{outer_bbt, MatrixField};
use crate::model::SdeModel;

/// Eigenvalues at or above this (scaled by `max(1, λ_max)`) count as PSD.
pub const PSD_TOL: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEvaluation {
    pub point: Vec<f64>,
    pub matrix: DMatrix<f64>,
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Columns are the matching eigenvectors; `det = +1`.
    pub eigenvectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted descending, each
/// eigenvector's first nonzero component made positive, and the last column
/// flipped if needed so that `det O = +1`.
pub fn sorted_symmetric_eigen(d: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = d.nrows();
    // symmetrize before decomposing; round-off in BBᵀ is not exactly symmetric
    let sym = (d + d.transpose()) * 0.5;
    // a multiple of the identity: every basis diagonalizes it, take O = I
    let c = sym.diagonal().mean();
    if (&sym - DMatrix::<f64>::identity(n, n) * c).amax() <= 1e-14 * c.abs().max(f64::MIN_POSITIVE)
    {
        return (vec![c; n], DMatrix::identity(n, n));
    }
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col = -col;
            }
        }
        vecs.set_column(c, &col);
    }
    if n > 0 && vecs.determinant() < 0.0 {
        let last = -vecs.column(n - 1).into_owned();
        vecs.set_column(n - 1, &last);
    }
    (values, vecs)
}

pub fn diffusion_matrix(noise: &MatrixField, x: &[f64]) -> Result<DiffusionEvaluation> {
    let b = noise.eval(x)?;
    let d = &b * b.transpose();
    let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&d);
    let scale = eigenvalues.first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&min) = eigenvalues.last() {
        if min < PSD_TOL * scale {
            return Err(Error::Indefinite {
                point: x.to_vec(),
                min_eigenvalue: min,
            });
        }
    }
    Ok(DiffusionEvaluation {
        point: x.to_vec(),
        matrix: d,
        eigenvalues,
        eigenvectors,
    })
}

/// `a_sp^i = Σ_{m,k} ∂_m b^{ik} b^{mk}` from precomputed `b` (n x m, row-major)
/// and gradient tensor `g`.
#[inline]
pub fn spurious_drift_kernel(b: &[f64], g: &[f64], n: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..m {
            let row = (i * m + k) * n;
            for j in 0..n {
                s += g[row + j] * b[j * m + k];
            }
        }
        out[i] = s;
    }
}

/// Noise-induced drift computed from the noise matrix and its derivatives.
pub fn spurious_drift_from_noise(noise: &MatrixField, x: &[f64]) -> Result<Vec<f64>> {
    noise.domain().check(x)?;
    let (n, m) = (noise.rows(), noise.cols());
    let mut b = vec![0.0; n * m];
    let mut g = vec![0.0; n * m * n];
    noise.eval_unchecked(x, &mut b);
    noise.gradient_unchecked(x, &mut g);
    let mut out = vec![0.0; n];
    spurious_drift_kernel(&b, &g, n, m, &mut out);
    Ok(out)
}

/// Noise-induced drift as half the divergence of a diffusion field,
/// `a_sp^i = ½ Σ_k ∂_k D^{ik}`. Pass `MatrixField::diffusion_of(&noise)`
/// to go through the noise.
pub fn spurious_drift_from_diffusion(diffusion: &MatrixField, x: &[f64]) -> Result<Vec<f64>> {
    let n = diffusion.rows();
    if diffusion.cols() != n || diffusion.dim() != n {
        return Err(Error::contract("diffusion field must be n x n over n coordinates"));
    }
    let g = diffusion.gradient(x)?;
    Ok((0..n)
        .map(|i| 0.5 * (0..n).map(|k| g[(i * n + k) * n + k]).sum::<f64>())
        .collect())
}

/// Drift of the equivalent Itô equation, `a + α a_sp`.
pub fn ito_equivalent_drift(model: &SdeModel, x: &[f64]) -> Result<Vec<f64>> {
    let mut a = model.drift().eval(x)?;
    let alpha = model.sense().value();
    if alpha != 0.0 {
        let sp = spurious_drift_from_noise(model.noise(), x)?;
        for (ai, si) in a.iter_mut().zip(&sp) {
            *ai += alpha * si;
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrizedNoise {
    /// `B_padded · O`, symmetric.
    pub b_sym: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    /// Rectangular inputs are completed by zeros to this square size.
    pub padded_size: usize,
    /// The polar factor was not unique; the null-space block was chosen
    /// closest to the identity.
    pub rank_deficient: bool,
}

/// Finds an orthogonal `O` with `B O` symmetric (`B` zero-padded to square).
/// Already-symmetric input returns `O = I`.
pub fn symmetrize_noise(b: &DMatrix<f64>) -> Result<SymmetrizedNoise> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("noise matrix has non-finite entries"));
    }
    let s = b.nrows().max(b.ncols());
    let mut bp = DMatrix::zeros(s, s);
    bp.view_mut((0, 0), b.shape()).copy_from(b);
    let scale = bp.amax().max(f64::MIN_POSITIVE);
    if (&bp - bp.transpose()).amax() <= 1e-14 * scale {
        return Ok(SymmetrizedNoise {
            b_sym: bp,
            rotation: DMatrix::identity(s, s),
            padded_size: s,
            rank_deficient: false,
        });
    }

    let svd = bp.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let sig = &svd.singular_values;
    let smax = sig.max();
    let null: Vec<usize> = (0..s).filter(|&i| sig[i] <= 1e-12 * smax).collect();
    let range: Vec<usize> = (0..s).filter(|i| !null.contains(i)).collect();

    // polar factor Q = U Vᵀ restricted to the range; O = Qᵀ
    let mut q = DMatrix::zeros(s, s);
    for &i in &range {
        q += u.column(i) * vt.row(i);
    }
    let rank_deficient = !null.is_empty();
    if rank_deficient {
        let k = null.len();
        let u0 = DMatrix::from_fn(s, k, |r, c| u[(r, null[c])]);
        let v0 = DMatrix::from_fn(s, k, |r, c| vt[(null[c], r)]);
        // maximize tr(U0 R V0ᵀ) over orthogonal R
        let mt = (v0.transpose() * &u0).transpose();
        let inner = mt.svd(true, true);
        let r = inner.u.unwrap() * inner.v_t.unwrap();
        q += &u0 * r * v0.transpose();
    }
    let rotation = q.transpose();
    let b_sym = &bp * &rotation;
    Ok(SymmetrizedNoise {
        b_sym,
        rotation,
        padded_size: s,
        rank_deficient,
    })
}

/// The symmetric square root `√(B Bᵀ)` as a field, i.e. the pointwise
/// polar-symmetrized noise (n x n). Its gradient is analytic: in the
/// eigenbasis of `P = √D` the derivative solves `P dP + dP P = dD`.
pub fn symmetrized_noise_field(noise: &MatrixField) -> MatrixField {
    let n = noise.rows();
    let diff = MatrixField::diffusion_of(noise);
    let d_eval = diff.clone();
    let field = MatrixField::new(n, n, noise.domain().clone(), move |x, out| {
        let mut d = vec![0.0; n * n];
        d_eval.eval_unchecked(x, &mut d);
        let p = sqrt_psd(&DMatrix::from_row_slice(n, n, &d));
        for i in 0..n {
            for k in 0..n {
                out[i * n + k] = p[(i, k)];
            }
        }
    });
    field.with_gradient(move |x, out| {
        let mut d = vec![0.0; n * n];
        let mut g = vec![0.0; n * n * n];
        diff.eval_unchecked(x, &mut d);
        diff.gradient_unchecked(x, &mut g);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &d));
        let roots: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
        let v = &eig.eigenvectors;
        for j in 0..n {
            let dd = DMatrix::from_fn(n, n, |i, k| g[(i * n + k) * n + j]);
            let mut t = v.transpose() * dd * v;
            for a in 0..n {
                for c in 0..n {
                    let s = roots[a] + roots[c];
                    t[(a, c)] = if s > 0.0 { t[(a, c)] / s } else { 0.0 };
                }
            }
            let dp = v * t * v.transpose();
            for i in 0..n {
                for k in 0..n {
                    out[(i * n + k) * n + j] = dp[(i, k)];
                }
            }
        }
    })
}

fn sqrt_psd(d: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(d.clone());
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `D = B Bᵀ` into a flat buffer.
pub fn diffusion_into(b: &[f64], n: usize, m: usize, out: &mut [f64]) {
    outer_bbt(b, n, m, out)
}

/// Relative deviation `‖u - v‖∞ / max(‖u‖∞, ‖v‖∞)`, zero when both vanish.
pub fn relative_deviation(u: &[f64], v: &[f64]) -> f64 {
    let diff = u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = u.iter().chain(v).map(|a| a.abs()).fold(0.0, f64::max);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}
