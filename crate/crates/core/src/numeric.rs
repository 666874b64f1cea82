//! Adaptive Simpson quadrature and monotone cubic (PCHIP) interpolation.

/// Recursion depth after which an interval is declared non-integrable.
const MAX_DEPTH: u32 = 48;

/// Failure of adaptive quadrature: the integrand was non-finite or the
/// recursion did not converge near `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureFailure {
    pub at: f64,
}

/// Adaptive Simpson with Richardson correction for a vector-valued
/// integrand; convergence is judged in the max norm.
pub fn adaptive_simpson_vec<const N: usize, F>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<[f64; N], QuadratureFailure>
where
    F: Fn(f64) -> [f64; N],
{
    if a == b {
        return Ok([0.0; N]);
    }
    let fa = checked(f(a), a)?;
    let fb = checked(f(b), b)?;
    let m = 0.5 * (a + b);
    let fm = checked(f(m), m)?;
    let whole = simpson(a, b, &fa, &fm, &fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 0)
}

pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadratureFailure>
where
    F: Fn(f64) -> f64,
{
    adaptive_simpson_vec(&|x| [f(x)], a, b, tol).map(|v| v[0])
}

fn checked<const N: usize>(v: [f64; N], at: f64) -> Result<[f64; N], QuadratureFailure> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(QuadratureFailure { at })
    }
}

#[inline]
fn simpson<const N: usize>(a: f64, b: f64, fa: &[f64; N], fm: &[f64; N], fb: &[f64; N]) -> [f64; N] {
    let h = (b - a) / 6.0;
    std::array::from_fn(|i| h * (fa[i] + 4.0 * fm[i] + fb[i]))
}

#[allow(clippy::too_many_arguments)]
fn recurse<const N: usize, F>(
    f: &F,
    a: f64,
    b: f64,
    fa: [f64; N],
    fm: [f64; N],
    fb: [f64; N],
    whole: [f64; N],
    tol: f64,
    depth: u32,
) -> Result<[f64; N], QuadratureFailure>
where
    F: Fn(f64) -> [f64; N],
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = checked(f(lm), lm)?;
    let frm = checked(f(rm), rm)?;
    let left = simpson(a, m, &fa, &flm, &fm);
    let right = simpson(m, b, &fm, &frm, &fb);
    let err = (0..N)
        .map(|i| (left[i] + right[i] - whole[i]).abs())
        .fold(0.0, f64::max);
    if err <= 15.0 * tol || (b - a).abs() <= 4.0 * f64::EPSILON * m.abs().max(1.0) {
        return Ok(std::array::from_fn(|i| {
            left[i] + right[i] + (left[i] + right[i] - whole[i]) / 15.0
        }));
    }
    if depth >= MAX_DEPTH {
        return Err(QuadratureFailure { at: m });
    }
    let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
    Ok(std::array::from_fn(|i| l[i] + r[i]))
}

/// Piecewise cubic Hermite interpolant with Fritsch-Carlson slopes; stays
/// monotone on monotone data.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two nodes.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Pchip {
        assert!(x.len() >= 2 && x.len() == y.len());
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Pchip { x, y, d }
    }

    /// Index `k` with `x[k] <= t <= x[k+1]`, clamped to the table.
    pub fn interval(&self, t: f64) -> usize {
        let k = self.x.partition_point(|&v| v <= t);
        k.saturating_sub(1).min(self.x.len() - 2)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.interval(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}
