//! Vector and matrix fields over an axis-aligned domain box.
//!
//! Fields write into caller-provided buffers so the path integrator can run
//! without allocating. Matrices are row-major. A matrix field's gradient
//! tensor is laid out as `g[(i * cols + k) * dim + j] = ∂b^{ik}/∂x^j`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Axis-aligned box `lo <= x <= hi` (closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::contract("domain bounds must have equal, positive length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a.is_nan() || b.is_nan() || a > b) {
            return Err(Error::contract("domain requires lo <= hi on every axis"));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        DomainBox::new(vec![lo], vec![hi])
    }

    pub fn unbounded(dim: usize) -> Self {
        DomainBox {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain { point: x.to_vec() })
        }
    }

    /// Componentwise intersection, used when composing fields.
    pub fn intersect(&self, other: &DomainBox) -> Result<DomainBox> {
        if self.dim() != other.dim() {
            return Err(Error::contract("domain dimensions differ"));
        }
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        DomainBox::new(lo, hi)
    }
}

/// Central-difference step `max(|x|, 1) * eps^(1/3)`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    x.abs().max(1.0) * f64::EPSILON.cbrt()
}

/// Finite-difference derivative of an `out_len`-valued map. Writes
/// `out[p * n + j] = ∂f_p/∂x^j`. Uses a central stencil, or a second-order
/// one-sided stencil when the central one would leave the box.
pub fn fd_derivative(
    f: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync),
    domain: &DomainBox,
    x: &[f64],
    out_len: usize,
    out: &mut [f64],
) {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut f1 = vec![0.0; out_len];
    let mut f2 = vec![0.0; out_len];
    let mut f0 = vec![0.0; out_len];
    for j in 0..n {
        let h = fd_step(x[j]);
        let can_up = x[j] + h <= domain.hi[j];
        let can_down = x[j] - h >= domain.lo[j];
        if (can_up && can_down) || (!can_up && !can_down) {
            xp[j] = x[j] + h;
            f(&xp, &mut f1);
            xp[j] = x[j] - h;
            f(&xp, &mut f2);
            let width = (x[j] + h) - (x[j] - h);
            for p in 0..out_len {
                out[p * n + j] = (f1[p] - f2[p]) / width;
            }
        } else {
            // one-sided: (-3 f0 + 4 f1 - f2) / 2h, mirrored for the backward case
            let s = if can_up { 1.0 } else { -1.0 };
            xp[j] = x[j];
            f(&xp, &mut f0);
            xp[j] = x[j] + s * h;
            f(&xp, &mut f1);
            xp[j] = x[j] + 2.0 * s * h;
            f(&xp, &mut f2);
            for p in 0..out_len {
                out[p * n + j] = s * (-3.0 * f0[p] + 4.0 * f1[p] - f2[p]) / (2.0 * h);
            }
        }
        xp[j] = x[j];
    }
}

/// Mixed absolute/relative comparison with a unit floor on the scale.
pub fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    domain: DomainBox,
    eval: FieldFn,
    jacobian: Option<FieldFn>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new<F>(domain: DomainBox, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        VectorField {
            dim: domain.dim(),
            domain,
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    /// Attach an analytic Jacobian writing `J[i * n + j] = ∂a^i/∂x^j`.
    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn zero(domain: DomainBox) -> Self {
        VectorField::constant(domain, vec![])
    }

    /// Constant field; an empty `value` means the zero vector.
    pub fn constant(domain: DomainBox, value: Vec<f64>) -> Self {
        let n = domain.dim();
        let value = if value.is_empty() { vec![0.0; n] } else { value };
        let v = value.clone();
        VectorField::new(domain, move |_, out| out.copy_from_slice(&v))
            .with_jacobian(move |_, out| out.iter_mut().for_each(|o| *o = 0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.domain.check(x)?;
        let mut out = vec![0.0; self.dim];
        (self.eval)(x, &mut out);
        Ok(out)
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.domain.check(x)?;
        let n = self.dim;
        let mut buf = vec![0.0; n * n];
        match &self.jacobian {
            Some(j) => j(x, &mut buf),
            None => fd_derivative(self.eval.as_ref(), &self.domain, x, n, &mut buf),
        }
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    pub fn fd_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.domain.check(x)?;
        let n = self.dim;
        let mut buf = vec![0.0; n * n];
        fd_derivative(self.eval.as_ref(), &self.domain, x, n, &mut buf);
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    /// Largest deviation between analytic and finite-difference Jacobians.
    /// `None` when no analytic Jacobian is attached.
    pub fn derivative_mismatch(&self, points: &[Vec<f64>]) -> Result<Option<f64>> {
        if self.jacobian.is_none() {
            return Ok(None);
        }
        let mut worst = 0.0f64;
        for p in points {
            let a = self.jacobian(p)?;
            let f = self.fd_jacobian(p)?;
            for (x, y) in a.iter().zip(f.iter()) {
                worst = worst.max(rel_dev(*x, *y));
            }
        }
        Ok(Some(worst))
    }
}

#[derive(Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    domain: DomainBox,
    eval: FieldFn,
    gradient: Option<FieldFn>,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("domain", &self.domain)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl MatrixField {
    pub fn new<F>(rows: usize, cols: usize, domain: DomainBox, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        MatrixField {
            rows,
            cols,
            domain,
            eval: Arc::new(eval),
            gradient: None,
        }
    }

    /// Attach the analytic gradient tensor (see module docs for the layout).
    pub fn with_gradient<F>(mut self, grad: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(grad));
        self
    }

    pub fn constant(domain: DomainBox, value: DMatrix<f64>) -> Self {
        let (rows, cols) = value.shape();
        let flat: Vec<f64> = value.transpose().iter().copied().collect();
        MatrixField::new(rows, cols, domain, move |_, out| out.copy_from_slice(&flat))
            .with_gradient(|_, out| out.iter_mut().for_each(|o| *o = 0.0))
    }

    /// 1x1 field from a scalar function and its derivative.
    pub fn scalar<F, G>(domain: DomainBox, f: F, df: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        MatrixField::new(1, 1, domain, move |x, out| out[0] = f(x[0]))
            .with_gradient(move |x, out| out[0] = df(x[0]))
    }

    /// The diffusion field `D = B Bᵀ` of a noise field. The gradient is the
    /// product rule on the noise gradient (analytic or finite differences).
    pub fn diffusion_of(noise: &MatrixField) -> MatrixField {
        let n = noise.rows;
        let m = noise.cols;
        let b_eval = noise.eval.clone();
        let field = MatrixField::new(n, n, noise.domain.clone(), move |x, out| {
            let mut b = vec![0.0; n * m];
            b_eval(x, &mut b);
            outer_bbt(&b, n, m, out);
        });
        let src = noise.clone();
        field.with_gradient(move |x, out| {
            let mut b = vec![0.0; n * m];
            let mut g = vec![0.0; n * m * n];
            src.eval_unchecked(x, &mut b);
            src.gradient_unchecked(x, &mut g);
            // ∂_j D^{ik} = Σ_l ∂_j b^{il} b^{kl} + b^{il} ∂_j b^{kl}
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for l in 0..m {
                            s += g[(i * m + l) * n + j] * b[k * m + l]
                                + b[i * m + l] * g[(k * m + l) * n + j];
                        }
                        out[(i * n + k) * n + j] = s;
                    }
                }
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// State dimension (the number of coordinates the field depends on).
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.domain.check(x)?;
        let mut buf = vec![0.0; self.rows * self.cols];
        (self.eval)(x, &mut buf);
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &buf))
    }

    /// Gradient tensor without the domain check (analytic if attached).
    #[inline]
    pub fn gradient_unchecked(&self, x: &[f64], out: &mut [f64]) {
        match &self.gradient {
            Some(g) => g(x, out),
            None => fd_derivative(
                self.eval.as_ref(),
                &self.domain,
                x,
                self.rows * self.cols,
                out,
            ),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.domain.check(x)?;
        let mut out = vec![0.0; self.rows * self.cols * self.dim()];
        self.gradient_unchecked(x, &mut out);
        Ok(out)
    }

    pub fn fd_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.domain.check(x)?;
        let mut out = vec![0.0; self.rows * self.cols * self.dim()];
        fd_derivative(
            self.eval.as_ref(),
            &self.domain,
            x,
            self.rows * self.cols,
            &mut out,
        );
        Ok(out)
    }

    /// A copy of this field that always differentiates numerically.
    pub fn without_gradient(&self) -> MatrixField {
        MatrixField {
            gradient: None,
            ..self.clone()
        }
    }

    pub fn derivative_mismatch(&self, points: &[Vec<f64>]) -> Result<Option<f64>> {
        if self.gradient.is_none() {
            return Ok(None);
        }
        let mut worst = 0.0f64;
        for p in points {
            let a = self.gradient(p)?;
            let f = self.fd_gradient(p)?;
            for (x, y) in a.iter().zip(&f) {
                worst = worst.max(rel_dev(*x, *y));
            }
        }
        Ok(Some(worst))
    }
}

/// `out = B Bᵀ` for row-major `B` (n x m).
#[inline]
pub(crate) fn outer_bbt(b: &[f64], n: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for k in i..n {
            let mut s = 0.0;
            for l in 0..m {
                s += b[i * m + l] * b[k * m + l];
            }
            out[i * n + k] = s;
            out[k * n + i] = s;
        }
    }
}
