//! Changes of variables `z(x)` that make the diffusion matrix constant.
//!
//! In one dimension `dz = D(x)^{-1/2} dx`, tabulated by quadrature. Diagonal
//! separable diffusions get one such chart per axis (axes with `D^{ii} ≡ 0`
//! pass through unchanged). A general 2D diffusion is handled numerically by
//! integrating the one-forms `|λ_i|^{-1/2} v_iᵀ dx` from a reference point;
//! such charts are validated against `J D Jᵀ = I` and rejected if they fail.

pub mod eigen;
mod transform;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fd_step, DomainBox, MatrixField};
use crate::numeric::{adaptive_simpson, Pchip};

pub use eigen::{eigen_field, grid_2d, EigenField, EigenMode, EigenPoint, SignatureProfile};
pub use transform::{
    map_back_sde, transform_diffusion, transform_drift_ito, transform_drift_tensor,
    transformed_spurious_drift, validate_chart, ValidationReport,
};

/// Per-interval tolerance of the tabulation quadrature.
pub const QUAD_TOL: f64 = 1e-10;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    Analytic1d,
    Tabulated1d,
    DiagonalNd,
    Numeric2d,
    Identity,
}

impl ChartKind {
    /// Residual tolerance for `J D Jᵀ` and the transformed spurious drift.
    pub fn tolerance(self) -> f64 {
        match self {
            ChartKind::Numeric2d => 1e-3,
            _ => 1e-8,
        }
    }
}

/// One tabulated axis: `z(x) = ∫_{x_ref}^{x} |f(s)|^{-1/2} ds`.
#[derive(Clone)]
struct AxisTable {
    x: Vec<f64>,
    z: Vec<f64>,
    kappa: i8,
    density: ScalarFn,
    seed: Pchip,
}

impl AxisTable {
    fn build(density: ScalarFn, lo: f64, hi: f64, x_ref: f64, grid_size: usize, kappa: i8) -> Result<AxisTable> {
        if grid_size < 2 || !(lo < hi) {
            return Err(Error::contract("chart needs lo < hi and at least two grid points"));
        }
        if !(lo..=hi).contains(&x_ref) {
            return Err(Error::contract(format!("reference {x_ref} outside [{lo}, {hi}]")));
        }
        let x: Vec<f64> = (0..grid_size)
            .map(|k| lo + (hi - lo) * k as f64 / (grid_size - 1) as f64)
            .collect();
        for &xk in &x {
            let f = density(xk);
            if !(f.is_finite() && f != 0.0 && f.signum() as i8 == kappa) {
                return Err(Error::SingularNoise { abscissa: xk });
            }
        }
        let scale = x.iter().map(|&s| density(s).abs()).fold(0.0, f64::max);
        let rate = rate_fn(density.clone(), kappa, eigen::RANK_TOL * scale);
        let mut z = vec![0.0; grid_size];
        for k in 0..grid_size - 1 {
            let piece = adaptive_simpson(&*rate, x[k], x[k + 1], QUAD_TOL)
                .map_err(|f| Error::SingularNoise { abscissa: f.at })?;
            z[k + 1] = z[k] + piece;
        }
        let mut table = AxisTable {
            seed: Pchip::new(z.clone(), x.clone()),
            x,
            z,
            kappa,
            density,
        };
        let shift = table.forward(x_ref)?;
        table.z.iter_mut().for_each(|v| *v -= shift);
        table.seed = Pchip::new(table.z.clone(), table.x.clone());
        Ok(table)
    }

    fn lo(&self) -> f64 {
        self.x[0]
    }

    fn hi(&self) -> f64 {
        *self.x.last().unwrap()
    }

    #[inline]
    fn rate(&self, x: f64) -> f64 {
        (self.density)(x).abs().powf(-0.5)
    }

    fn forward(&self, x: f64) -> Result<f64> {
        if !(self.lo()..=self.hi()).contains(&x) {
            return Err(Error::ChartRange { value: vec![x], path: None });
        }
        let h = self.x[1] - self.x[0];
        let k = (((x - self.x[0]) / h).floor() as usize).min(self.x.len() - 2);
        let rate = |s: f64| self.rate(s);
        let piece = adaptive_simpson(rate, self.x[k], x, QUAD_TOL)
            .map_err(|f| Error::SingularNoise { abscissa: f.at })?;
        Ok(self.z[k] + piece)
    }

    fn inverse(&self, z: f64) -> Result<f64> {
        let (z0, z1) = (self.z[0], *self.z.last().unwrap());
        if !(z0..=z1).contains(&z) {
            return Err(Error::ChartRange { value: vec![z], path: None });
        }
        let k = self.seed.interval(z);
        let (mut lo, mut hi) = (self.x[k], self.x[k + 1]);
        let mut x = self.seed.eval(z).clamp(lo, hi);
        let tol = 1e-13 * z.abs().max(1.0);
        for _ in 0..100 {
            let r = self.forward(x)? - z;
            if r.abs() <= tol {
                break;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut next = x - r / self.rate(x);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (hi - lo) <= 4.0 * f64::EPSILON * x.abs().max(1.0) || next == x {
                x = next;
                break;
            }
            x = next;
        }
        Ok(x)
    }
}

/// `(κ f)^{-1/2}`, NaN where `κ f` drops below `floor` (a zero or sign
/// change between nodes), which the quadrature reports as a failure there.
fn rate_fn(density: ScalarFn, kappa: i8, floor: f64) -> ScalarFn {
    Arc::new(move |s| {
        let v = kappa as f64 * density(s);
        if v > floor {
            v.powf(-0.5)
        } else {
            f64::NAN
        }
    })
}

#[derive(Clone)]
struct Analytic1d {
    params: BTreeMap<String, f64>,
    forward: ScalarFn,
    inverse: ScalarFn,
    rate: ScalarFn,
}

#[derive(Clone)]
enum AxisChart {
    Passthrough,
    Table(AxisTable),
}

/// Numerical 2D chart: `z^i(x)` integrates `|λ_i|^{-1/2} ⟨v_i, dx⟩` along
/// the L-shaped path `ref → (x1, ref2) → x`.
#[derive(Clone)]
struct Numeric2d {
    diffusion: MatrixField,
    reference: [f64; 2],
    eigen: EigenField,
    nx: usize,
    ny: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    /// Forward values at the grid nodes (same order as `eigen.points`).
    z_nodes: Vec<[f64; 2]>,
}

impl Numeric2d {
    fn nearest_node(&self, p: &[f64]) -> &EigenPoint {
        let idx = |v: f64, a: f64, b: f64, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            (((v - a) / (b - a) * (n - 1) as f64).round().max(0.0) as usize).min(n - 1)
        };
        let i = idx(p[0], self.lo[0], self.hi[0], self.nx);
        let j = idx(p[1], self.lo[1], self.hi[1], self.ny);
        // boustrophedon order
        let k = if j % 2 == 0 { i } else { self.nx - 1 - i };
        &self.eigen.points[j * self.nx + k]
    }

    /// Rows `|λ_i|^{-1/2} v_iᵀ`, with eigenvectors matched to the nearest
    /// grid node's by overlap and sign.
    fn one_forms(&self, p: &[f64]) -> Matrix2<f64> {
        let mut d = [0.0; 4];
        self.diffusion.eval_unchecked(p, &mut d);
        let (vals, vecs) = eigen2(&d);
        let r = &self.nearest_node(p).vectors;
        let r0 = Vector2::new(r[(0, 0)], r[(1, 0)]);
        let r1 = Vector2::new(r[(0, 1)], r[(1, 1)]);
        let (mut l, mut v) = (vals, vecs);
        if v[0].dot(&r0).abs() < v[0].dot(&r1).abs() {
            l.swap(0, 1);
            v.swap(0, 1);
        }
        if v[0].dot(&r0) < 0.0 {
            v[0] = -v[0];
        }
        if v[1].dot(&r1) < 0.0 {
            v[1] = -v[1];
        }
        let s0 = l[0].abs().powf(-0.5);
        let s1 = l[1].abs().powf(-0.5);
        Matrix2::new(s0 * v[0][0], s0 * v[0][1], s1 * v[1][0], s1 * v[1][1])
    }

    fn forward(&self, x: &[f64]) -> [f64; 2] {
        let r = self.reference;
        let leg1 = gauss_legendre(r[0], x[0], |s| {
            let w = self.one_forms(&[s, r[1]]);
            [w[(0, 0)], w[(1, 0)]]
        });
        let leg2 = gauss_legendre(r[1], x[1], |s| {
            let w = self.one_forms(&[x[0], s]);
            [w[(0, 1)], w[(1, 1)]]
        });
        [leg1[0] + leg2[0], leg1[1] + leg2[1]]
    }
}

impl Numeric2d {
    /// Derivative of [`Numeric2d::forward`]. The x2-column is the one-form
    /// itself; the x1-column adds the x1-derivative of the second leg,
    /// differenced term by term under the fixed quadrature rule.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let r = self.reference;
        let end = self.one_forms(x);
        let start = self.one_forms(&[x[0], r[1]]);
        let h = 1e-5 * x[0].abs().max(1.0);
        let (a, b) = if x[0] + h <= self.hi[0] && x[0] - h >= self.lo[0] {
            (x[0] + h, x[0] - h)
        } else if x[0] + h <= self.hi[0] {
            (x[0] + h, x[0])
        } else {
            (x[0], x[0] - h)
        };
        let extra = gauss_legendre(r[1], x[1], |s| {
            let up = self.one_forms(&[a, s]);
            let dn = self.one_forms(&[b, s]);
            [
                (up[(0, 1)] - dn[(0, 1)]) / (a - b),
                (up[(1, 1)] - dn[(1, 1)]) / (a - b),
            ]
        });
        DMatrix::from_row_slice(
            2,
            2,
            &[
                start[(0, 0)] + extra[0],
                end[(0, 1)],
                start[(1, 0)] + extra[1],
                end[(1, 1)],
            ],
        )
    }
}

/// Eigenpairs of a symmetric 2x2 matrix (row-major), sorted descending;
/// a multiple of the identity yields the axes.
fn eigen2(d: &[f64; 4]) -> ([f64; 2], [Vector2<f64>; 2]) {
    let (a, b, c) = (d[0], 0.5 * (d[1] + d[2]), d[3]);
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    let rad = half.hypot(b);
    if rad <= 1e-14 * mean.abs().max(f64::MIN_POSITIVE) {
        return ([mean, mean], [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)]);
    }
    let l0 = mean + rad;
    let l1 = mean - rad;
    // eigenvector of l0 from the better-conditioned row
    let v = if half >= 0.0 {
        Vector2::new(half + rad, b)
    } else {
        Vector2::new(b, rad - half)
    };
    let v = v.normalize();
    ([l0, l1], [v, Vector2::new(-v[1], v[0])])
}

const GL_PANELS: usize = 32;
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss-Legendre on fixed panels, so the result is a
/// smooth function of the endpoints (finite differences stay clean).
fn gauss_legendre<F: Fn(f64) -> [f64; 2]>(a: f64, b: f64, f: F) -> [f64; 2] {
    if a == b {
        return [0.0; 2];
    }
    let h = (b - a) / GL_PANELS as f64;
    let mut acc = [0.0; 2];
    for p in 0..GL_PANELS {
        let mid = a + (p as f64 + 0.5) * h;
        for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            for s in [-1.0, 1.0] {
                let v = f(mid + s * node * 0.5 * h);
                acc[0] += w * 0.5 * h * v[0];
                acc[1] += w * 0.5 * h * v[1];
            }
        }
    }
    acc
}

#[derive(Clone)]
enum Repr {
    Identity,
    Analytic(Analytic1d),
    Table(AxisTable),
    Diagonal(Vec<AxisChart>),
    Numeric(Box<Numeric2d>),
}

/// An invertible change of variables `z(x)` with its Jacobian `∂z/∂x`.
#[derive(Clone)]
pub struct CoordinateChart {
    kind: ChartKind,
    dim: usize,
    x_box: DomainBox,
    z_box: DomainBox,
    reference: Vec<f64>,
    kappa: Vec<i8>,
    repr: Repr,
    validation: Option<ValidationReport>,
}

impl fmt::Debug for CoordinateChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoordinateChart")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("x_box", &self.x_box)
            .field("z_box", &self.z_box)
            .field("kappa", &self.kappa)
            .finish()
    }
}

impl CoordinateChart {
    pub fn identity(x_box: DomainBox) -> CoordinateChart {
        let dim = x_box.dim();
        CoordinateChart {
            kind: ChartKind::Identity,
            dim,
            z_box: x_box.clone(),
            reference: vec![0.0; dim],
            kappa: vec![1; dim],
            repr: Repr::Identity,
            x_box,
            validation: None,
        }
    }

    /// Closed-form chart of `b(x) = σx`: `z = ln(x / x_ref) / σ`, `x = x_ref e^{σz}`.
    pub fn geometric(sigma: f64, x_ref: f64, lo: f64, hi: f64) -> Result<CoordinateChart> {
        if !(sigma > 0.0 && lo > 0.0 && lo < hi && x_ref > 0.0) {
            return Err(Error::contract("geometric chart needs sigma > 0 and 0 < lo < hi"));
        }
        let params = [("sigma", sigma), ("x_ref", x_ref)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let f: ScalarFn = Arc::new(move |x| (x / x_ref).ln() / sigma);
        let z_box = DomainBox::interval(f(lo), f(hi))?;
        Ok(CoordinateChart {
            kind: ChartKind::Analytic1d,
            dim: 1,
            x_box: DomainBox::interval(lo, hi)?,
            z_box,
            reference: vec![x_ref],
            kappa: vec![1],
            repr: Repr::Analytic(Analytic1d {
                params,
                forward: f,
                inverse: Arc::new(move |z| x_ref * (sigma * z).exp()),
                rate: Arc::new(move |x| 1.0 / (sigma * x)),
            }),
            validation: None,
        })
    }

    /// Closed-form chart of `b(x) = sqrt(1 + x²)`: `z = asinh(x)`.
    pub fn asinh(lo: f64, hi: f64) -> Result<CoordinateChart> {
        Ok(CoordinateChart {
            kind: ChartKind::Analytic1d,
            dim: 1,
            x_box: DomainBox::interval(lo, hi)?,
            z_box: DomainBox::interval(lo.asinh(), hi.asinh())?,
            reference: vec![0.0],
            kappa: vec![1],
            repr: Repr::Analytic(Analytic1d {
                params: BTreeMap::new(),
                forward: Arc::new(f64::asinh),
                inverse: Arc::new(f64::sinh),
                rate: Arc::new(|x| 1.0 / (1.0 + x * x).sqrt()),
            }),
            validation: None,
        })
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_box(&self) -> &DomainBox {
        &self.x_box
    }

    pub fn z_box(&self) -> &DomainBox {
        &self.z_box
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Normal-form coefficient per z-axis: 1, 0 or -1.
    pub fn kappa(&self) -> &[i8] {
        &self.kappa
    }

    pub fn validation(&self) -> Option<&ValidationReport> {
        self.validation.as_ref()
    }

    pub fn with_validation(mut self, report: ValidationReport) -> Self {
        self.validation = Some(report);
        self
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if self.x_box.contains(x) {
            Ok(())
        } else {
            Err(Error::ChartRange {
                value: x.to_vec(),
                path: None,
            })
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(match &self.repr {
            Repr::Identity => x.to_vec(),
            Repr::Analytic(a) => vec![(a.forward)(x[0])],
            Repr::Table(t) => vec![t.forward(x[0])?],
            Repr::Diagonal(axes) => axes
                .iter()
                .zip(x)
                .map(|(ax, &v)| match ax {
                    AxisChart::Passthrough => Ok(v),
                    AxisChart::Table(t) => t.forward(v),
                })
                .collect::<Result<Vec<f64>>>()?,
            Repr::Numeric(n) => n.forward(x).to_vec(),
        })
    }

    /// `x(z)`; errors with [`Error::ChartRange`] outside the valid z range.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if !self.z_box.contains(z) {
            return Err(Error::ChartRange {
                value: z.to_vec(),
                path: None,
            });
        }
        Ok(match &self.repr {
            Repr::Identity => z.to_vec(),
            Repr::Analytic(a) => vec![(a.inverse)(z[0]).clamp(self.x_box.lo()[0], self.x_box.hi()[0])],
            Repr::Table(t) => vec![t.inverse(z[0])?],
            Repr::Diagonal(axes) => axes
                .iter()
                .zip(z)
                .map(|(ax, &v)| match ax {
                    AxisChart::Passthrough => Ok(v),
                    AxisChart::Table(t) => t.inverse(v),
                })
                .collect::<Result<Vec<f64>>>()?,
            Repr::Numeric(n) => self.numeric_inverse(n, z)?,
        })
    }

    fn numeric_inverse(&self, n: &Numeric2d, z: &[f64]) -> Result<Vec<f64>> {
        let start = n
            .z_nodes
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (a[0] - z[0]).hypot(a[1] - z[1]);
                let db = (b[0] - z[0]).hypot(b[1] - z[1]);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap();
        let mut x = n.eigen.points[start].point.clone();
        let scale = z[0].abs().max(z[1].abs()).max(1.0);
        for _ in 0..60 {
            let fz = n.forward(&x);
            let r = Vector2::new(fz[0] - z[0], fz[1] - z[1]);
            if r.amax() <= 1e-12 * scale {
                return Ok(x);
            }
            let j = self.jacobian(&x)?;
            let j = Matrix2::new(j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
            let step = j
                .try_inverse()
                .ok_or_else(|| Error::SingularJacobian(x.clone()))?
                * r;
            // damp steps that would leave the box
            let mut t = 1.0;
            loop {
                let cand = [x[0] - t * step[0], x[1] - t * step[1]];
                if self.x_box.contains(&cand) || t < 1e-6 {
                    x = cand
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v.clamp(self.x_box.lo()[i], self.x_box.hi()[i]))
                        .collect();
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::ChartRange {
            value: z.to_vec(),
            path: None,
        })
    }

    /// `∂z/∂x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_x(x)?;
        let n = self.dim;
        Ok(match &self.repr {
            Repr::Identity => DMatrix::identity(n, n),
            Repr::Analytic(a) => DMatrix::from_element(1, 1, (a.rate)(x[0])),
            Repr::Table(t) => DMatrix::from_element(1, 1, t.rate(x[0])),
            Repr::Diagonal(axes) => DMatrix::from_fn(n, n, |i, j| {
                if i != j {
                    0.0
                } else {
                    match &axes[i] {
                        AxisChart::Passthrough => 1.0,
                        AxisChart::Table(t) => t.rate(x[i]),
                    }
                }
            }),
            Repr::Numeric(num) => num.jacobian(x),
        })
    }

    /// Steps for differencing quantities that already contain the Jacobian.
    /// Numeric charts differentiate their forward map once already, so they
    /// use a coarser step to keep the nested round-off small.
    pub(crate) fn second_order_steps(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ChartKind::Numeric2d => x.iter().map(|v| 1e-3 * v.abs().max(1.0)).collect(),
            _ => x.iter().map(|&v| fd_step(v)).collect(),
        }
    }

    /// Second derivatives: element `i` is the matrix `∂²z^i/∂x^j∂x^k`,
    /// from finite differences of the Jacobian.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_x(x)?;
        let n = self.dim;
        let h = self.second_order_steps(x);
        let flat = self.fd(x, &h, n * n, |p| {
            let j = self.jacobian(p)?;
            Ok((0..n * n).map(|q| j[(q / n, q % n)]).collect())
        })?;
        // flat[(i*n + j), k] = ∂_k J_{ij}
        Ok((0..n)
            .map(|i| {
                let m = DMatrix::from_fn(n, n, |j, k| flat[(i * n + j, k)]);
                (&m + m.transpose()) * 0.5
            })
            .collect())
    }

    /// Central (or one-sided at the box edge) differences of `f`, returning
    /// the `out_len x n` matrix of partial derivatives.
    pub(crate) fn fd<F>(&self, x: &[f64], h: &[f64], out_len: usize, f: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let n = x.len();
        let mut out = DMatrix::zeros(out_len, n);
        let mut p = x.to_vec();
        for j in 0..n {
            let up = x[j] + h[j] <= self.x_box.hi()[j];
            let down = x[j] - h[j] >= self.x_box.lo()[j];
            if up && down {
                p[j] = x[j] + h[j];
                let a = f(&p)?;
                p[j] = x[j] - h[j];
                let b = f(&p)?;
                for q in 0..out_len {
                    out[(q, j)] = (a[q] - b[q]) / (2.0 * h[j]);
                }
            } else {
                let s = if up { 1.0 } else { -1.0 };
                let f0 = f(x)?;
                p[j] = x[j] + s * h[j];
                let f1 = f(&p)?;
                p[j] = x[j] + 2.0 * s * h[j];
                let f2 = f(&p)?;
                for q in 0..out_len {
                    out[(q, j)] = s * (-3.0 * f0[q] + 4.0 * f1[q] - f2[q]) / (2.0 * h[j]);
                }
            }
            p[j] = x[j];
        }
        Ok(out)
    }

    pub fn to_record(&self) -> ChartRecord {
        let axis_record = |a: &AxisChart| match a {
            AxisChart::Passthrough => AxisRecord {
                x: vec![],
                z: vec![],
                kappa: 0,
            },
            AxisChart::Table(t) => AxisRecord {
                x: t.x.clone(),
                z: t.z.clone(),
                kappa: t.kappa,
            },
        };
        let (axes, params, grid) = match &self.repr {
            Repr::Identity => (vec![], BTreeMap::new(), None),
            Repr::Analytic(a) => (vec![], a.params.clone(), None),
            Repr::Table(t) => (vec![axis_record(&AxisChart::Table(t.clone()))], BTreeMap::new(), None),
            Repr::Diagonal(axes) => (axes.iter().map(axis_record).collect(), BTreeMap::new(), None),
            Repr::Numeric(n) => (
                vec![],
                BTreeMap::new(),
                Some(GridRecord {
                    nx: n.nx,
                    ny: n.ny,
                    points: n.eigen.points.iter().map(|p| [p.point[0], p.point[1]]).collect(),
                    z: n.z_nodes.clone(),
                }),
            ),
        };
        let tolerances = [
            ("quadrature", QUAD_TOL),
            ("round_trip", 1e-8),
            ("residual", self.kind.tolerance()),
            ("rank", eigen::RANK_TOL),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ChartRecord {
            kind: self.kind,
            dim: self.dim,
            reference: self.reference.clone(),
            x_box: self.x_box.clone(),
            z_box: self.z_box.clone(),
            kappa: self.kappa.clone(),
            axes,
            params,
            tolerances,
            validation: self.validation.clone(),
            grid,
        }
    }
}

/// Serializable description of a chart: kind, boxes, reference point,
/// grid tables and validation residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartRecord {
    pub kind: ChartKind,
    pub dim: usize,
    pub reference: Vec<f64>,
    pub x_box: DomainBox,
    pub z_box: DomainBox,
    pub kappa: Vec<i8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub axes: Vec<AxisRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub validation: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRecord {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub kappa: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub nx: usize,
    pub ny: usize,
    pub points: Vec<[f64; 2]>,
    pub z: Vec<[f64; 2]>,
}

/// The scalar `D(s)` of a 1x1 diffusion field.
fn scalar_density(diffusion: &MatrixField) -> ScalarFn {
    let d = diffusion.clone();
    Arc::new(move |s| {
        let mut v = [0.0];
        d.eval_unchecked(&[s], &mut v);
        v[0]
    })
}

/// Tabulated 1D chart `z(x) = ∫_{x_ref}^{x} D(s)^{-1/2} ds` on `grid_size`
/// uniform nodes. Fails with [`Error::SingularNoise`] where `D` vanishes.
pub fn build_chart_1d(
    diffusion: &MatrixField,
    lo: f64,
    hi: f64,
    x_ref: f64,
    grid_size: usize,
) -> Result<CoordinateChart> {
    if diffusion.rows() != 1 || diffusion.cols() != 1 || diffusion.dim() != 1 {
        return Err(Error::contract("1D chart needs a 1x1 diffusion field"));
    }
    let x_box = DomainBox::interval(lo, hi)?;
    if !diffusion.domain().contains(&[lo]) || !diffusion.domain().contains(&[hi]) {
        return Err(Error::Domain {
            point: vec![lo, hi],
        });
    }
    let table = AxisTable::build(scalar_density(diffusion), lo, hi, x_ref, grid_size, 1)?;
    let z_box = DomainBox::interval(table.z[0], *table.z.last().unwrap())?;
    Ok(CoordinateChart {
        kind: ChartKind::Tabulated1d,
        dim: 1,
        x_box,
        z_box,
        reference: vec![x_ref],
        kappa: vec![1],
        repr: Repr::Table(table),
        validation: None,
    })
}

/// Per-axis charts for a diagonal diffusion `D^{ii}(x) = f_i(x^i)`. Axes with
/// `f_i ≡ 0` pass through; in [`EigenMode::Signature`] negative axes are
/// rescaled by `|f_i|^{-1/2}` and get `kappa = -1`.
pub fn build_chart_diagonal(
    diffusion: &MatrixField,
    lo: &[f64],
    hi: &[f64],
    reference: &[f64],
    grid_size: usize,
    mode: EigenMode,
) -> Result<CoordinateChart> {
    let n = diffusion.rows();
    if diffusion.cols() != n || diffusion.dim() != n || lo.len() != n || hi.len() != n || reference.len() != n {
        return Err(Error::contract("diagonal chart: dimensions disagree"));
    }
    let x_box = DomainBox::new(lo.to_vec(), hi.to_vec())?;
    x_box.check(reference)?;

    // diagonal and separable on a coarse probe grid
    let probe = 5usize;
    let mut max_abs = 0.0f64;
    let mut probes = Vec::new();
    for c in 0..probe.pow(n as u32) {
        let mut rem = c;
        let p: Vec<f64> = (0..n)
            .map(|i| {
                let t = (rem % probe) as f64 / (probe - 1) as f64;
                rem /= probe;
                lo[i] + t * (hi[i] - lo[i])
            })
            .collect();
        probes.push(p);
    }
    for p in &probes {
        let d = diffusion.eval(p)?;
        max_abs = max_abs.max(d.amax());
    }
    let tol = eigen::RANK_TOL * max_abs.max(f64::MIN_POSITIVE);
    for p in &probes {
        let d = diffusion.eval(p)?;
        for i in 0..n {
            for k in 0..n {
                if i != k && d[(i, k)].abs() > 1e-12 * max_abs {
                    return Err(Error::contract(format!("diffusion not diagonal at {p:?}")));
                }
            }
            let mut q = reference.to_vec();
            q[i] = p[i];
            let sep = diffusion.eval(&q)?[(i, i)];
            if (sep - d[(i, i)]).abs() > 1e-12 * max_abs {
                return Err(Error::contract(format!(
                    "D^{{{i}{i}}} depends on other coordinates at {p:?}"
                )));
            }
        }
    }

    let mut axes = Vec::with_capacity(n);
    let mut kappa = Vec::with_capacity(n);
    let mut z_lo = Vec::with_capacity(n);
    let mut z_hi = Vec::with_capacity(n);
    for i in 0..n {
        let field = diffusion.clone();
        let base = reference.to_vec();
        let f: ScalarFn = Arc::new(move |s| {
            let mut p = base.clone();
            p[i] = s;
            let mut d = vec![0.0; n * n];
            field.eval_unchecked(&p, &mut d);
            d[i * n + i]
        });
        let samples: Vec<f64> = (0..grid_size.max(2))
            .map(|k| f(lo[i] + (hi[i] - lo[i]) * k as f64 / (grid_size.max(2) - 1) as f64))
            .collect();
        let signs: Vec<i8> = samples
            .iter()
            .map(|&v| if v > tol { 1 } else if v < -tol { -1 } else { 0 })
            .collect();
        if signs.iter().all(|&s| s == 0) {
            axes.push(AxisChart::Passthrough);
            kappa.push(0);
            z_lo.push(lo[i]);
            z_hi.push(hi[i]);
            continue;
        }
        let k0 = signs[0];
        if let Some(pos) = signs.iter().position(|&s| s != k0) {
            let at = lo[i] + (hi[i] - lo[i]) * pos as f64 / (grid_size.max(2) - 1) as f64;
            return Err(Error::RankVariation(format!(
                "axis {} changes rank near x{} = {at}",
                i + 1,
                i + 1
            )));
        }
        if k0 < 0 && mode == EigenMode::Diffusion {
            return Err(Error::Indefinite {
                point: reference.to_vec(),
                min_eigenvalue: samples[0],
            });
        }
        let table = AxisTable::build(f, lo[i], hi[i], reference[i], grid_size, k0)?;
        z_lo.push(table.z[0]);
        z_hi.push(*table.z.last().unwrap());
        axes.push(AxisChart::Table(table));
        kappa.push(k0);
    }
    Ok(CoordinateChart {
        kind: ChartKind::DiagonalNd,
        dim: n,
        z_box: DomainBox::new(z_lo, z_hi)?,
        x_box,
        reference: reference.to_vec(),
        kappa,
        repr: Repr::Diagonal(axes),
        validation: None,
    })
}

/// Numerical 2D chart on the box `[lo, hi]` with an `nx x ny` eigen grid.
/// The chart is validated at every grid node; a residual
/// `max ‖J D Jᵀ − I‖` above the numeric-chart tolerance rejects it.
pub fn build_chart_2d(
    diffusion: &MatrixField,
    lo: [f64; 2],
    hi: [f64; 2],
    reference: [f64; 2],
    nx: usize,
    ny: usize,
) -> Result<CoordinateChart> {
    if diffusion.rows() != 2 || diffusion.cols() != 2 || diffusion.dim() != 2 {
        return Err(Error::contract("2D chart needs a 2x2 diffusion field"));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::contract("2D chart needs at least a 2 x 2 grid"));
    }
    let x_box = DomainBox::new(lo.to_vec(), hi.to_vec())?;
    x_box.check(&reference)?;
    let grid = grid_2d(lo, hi, nx, ny);
    let eigen = eigen_field(diffusion, &grid, EigenMode::Diffusion)?;
    if eigen.signature.n_plus != 2 {
        return Err(Error::RankVariation(
            "2D chart needs a positive definite diffusion".into(),
        ));
    }
    let mut num = Numeric2d {
        diffusion: diffusion.clone(),
        reference,
        eigen,
        nx,
        ny,
        lo,
        hi,
        z_nodes: vec![],
    };
    num.z_nodes = grid.iter().map(|p| num.forward(p)).collect();
    let (mut zl, mut zh) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for z in &num.z_nodes {
        for i in 0..2 {
            zl[i] = zl[i].min(z[i]);
            zh[i] = zh[i].max(z[i]);
        }
    }
    let chart = CoordinateChart {
        kind: ChartKind::Numeric2d,
        dim: 2,
        x_box,
        z_box: DomainBox::new(zl.to_vec(), zh.to_vec())?,
        reference: reference.to_vec(),
        kappa: vec![1, 1],
        repr: Repr::Numeric(Box::new(num)),
        validation: None,
    };
    let mut map = Vec::with_capacity(grid.len());
    for p in &grid {
        let j = chart.jacobian(p)?;
        let d = diffusion.eval(p)?;
        let r = (&j * d * j.transpose() - DMatrix::<f64>::identity(2, 2)).amax();
        map.push([p[0], p[1], r]);
    }
    let worst = map.iter().map(|m| m[2]).fold(0.0, f64::max);
    let tol = ChartKind::Numeric2d.tolerance();
    if !(worst <= tol) {
        return Err(Error::ChartRejected {
            residual: worst,
            tolerance: tol,
            map,
        });
    }
    let report = validate_chart(&chart, diffusion, &grid)?;
    Ok(chart.with_validation(report))
}
