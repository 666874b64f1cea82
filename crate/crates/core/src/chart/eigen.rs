//! Eigenvalue/eigenvector fields of a symmetric matrix field with
//! sign-continuous eigenvectors and a constant-rank (signature) check.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffusion::sorted_symmetric_eigen;
use crate::error::{Error, Result};
use crate::field::MatrixField;

/// Relative zero threshold for eigenvalues (times the largest |λ| on the grid).
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMode {
    /// PSD input required; negative eigenvalues beyond round-off are errors.
    Diffusion,
    /// Indefinite input allowed; kappa records the sign pattern.
    Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureProfile {
    pub n_plus: usize,
    pub n_zero: usize,
    pub n_minus: usize,
    /// Per sorted eigen-axis: 1, 0 or -1.
    pub kappa: Vec<i8>,
}

impl SignatureProfile {
    pub fn from_eigenvalues(values: &[f64], tol: f64) -> SignatureProfile {
        let kappa: Vec<i8> = values
            .iter()
            .map(|&l| {
                if l > tol {
                    1
                } else if l < -tol {
                    -1
                } else {
                    0
                }
            })
            .collect();
        SignatureProfile {
            n_plus: kappa.iter().filter(|&&k| k == 1).count(),
            n_zero: kappa.iter().filter(|&&k| k == 0).count(),
            n_minus: kappa.iter().filter(|&&k| k == -1).count(),
            kappa,
        }
    }

    pub fn rank(&self) -> usize {
        self.n_plus + self.n_minus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPoint {
    pub point: Vec<f64>,
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Orthogonal, `det = +1`, columns matched to `eigenvalues`.
    pub vectors: DMatrix<f64>,
    /// False where a column had to be chosen without a usable predecessor
    /// (orthogonal to it) or flipped to restore `det = +1`.
    pub continuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenField {
    pub points: Vec<EigenPoint>,
    pub signature: SignatureProfile,
    pub rank_tol: f64,
}

/// Decomposes the field at every grid point, in the given traversal order.
/// Consecutive points should be neighbours (see [`grid_2d`]).
pub fn eigen_field(field: &MatrixField, grid: &[Vec<f64>], mode: EigenMode) -> Result<EigenField> {
    if field.rows() != field.cols() {
        return Err(Error::contract("eigen field needs a square matrix field"));
    }
    if grid.is_empty() {
        return Err(Error::contract("empty grid"));
    }
    let mut raw = Vec::with_capacity(grid.len());
    for p in grid {
        let d = field.eval(p)?;
        if (&d - d.transpose()).amax() > 1e-12 * d.amax().max(1.0) {
            return Err(Error::contract(format!("matrix not symmetric at {p:?}")));
        }
        raw.push(sorted_symmetric_eigen(&d));
    }
    let max_abs = raw
        .iter()
        .flat_map(|(v, _)| v.iter().map(|l| l.abs()))
        .fold(0.0, f64::max);
    let rank_tol = RANK_TOL * max_abs;

    let mut signature: Option<SignatureProfile> = None;
    let mut points: Vec<EigenPoint> = Vec::with_capacity(grid.len());
    for (p, (values, mut vecs)) in grid.iter().zip(raw) {
        if mode == EigenMode::Diffusion {
            let min = values.last().copied().unwrap_or(0.0);
            if min < -1e-12 * max_abs.max(1.0) {
                return Err(Error::Indefinite {
                    point: p.clone(),
                    min_eigenvalue: min,
                });
            }
        }
        let sig = SignatureProfile::from_eigenvalues(&values, rank_tol);
        match &signature {
            None => signature = Some(sig),
            Some(s) if *s != sig => {
                return Err(Error::RankVariation(format!(
                    "signature {:?} at {p:?} differs from {:?} elsewhere; \
                     the rank must be the same at every point",
                    sig.kappa, s.kappa
                )))
            }
            _ => {}
        }

        let mut continuous = true;
        if let Some(prev) = points.last() {
            for c in 0..vecs.ncols() {
                let dot = vecs.column(c).dot(&prev.vectors.column(c));
                if dot.abs() < 1e-12 {
                    // orthogonal to the predecessor: keep the positive-first-component choice
                    continuous = false;
                } else if dot < 0.0 {
                    let flipped = -vecs.column(c).into_owned();
                    vecs.set_column(c, &flipped);
                }
            }
            let n = vecs.ncols();
            if vecs.determinant() < 0.0 {
                let flipped = -vecs.column(n - 1).into_owned();
                vecs.set_column(n - 1, &flipped);
                continuous = false;
            }
        }
        points.push(EigenPoint {
            point: p.clone(),
            eigenvalues: values,
            vectors: vecs,
            continuous,
        });
    }
    Ok(EigenField {
        points,
        signature: signature.expect("non-empty grid"),
        rank_tol,
    })
}

/// Uniform `nx x ny` grid in boustrophedon order (each row reverses
/// direction), so consecutive points are always neighbours.
pub fn grid_2d(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Vec<Vec<f64>> {
    let ax = |i: usize, n: usize, a: f64, b: f64| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = ax(j, ny, lo[1], hi[1]);
        for k in 0..nx {
            let i = if j % 2 == 0 { k } else { nx - 1 - k };
            out.push(vec![ax(i, nx, lo[0], hi[0]), y]);
        }
    }
    out
}
