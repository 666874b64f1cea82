//! One-dimensional Fokker-Planck evolution in conservative flux form.
//!
//! `w_t = −∂_x F`, `F = (a + α a_sp) w − ½ ∂_x (D w)`. Grid nodes carry
//! control volumes of width `Δx` (half that at the two ends), so the
//! trapezoid mass is exactly what the scheme conserves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chart::CoordinateChart;
use crate::diffusion::ito_equivalent_drift;
use crate::error::{Error, Result};
use crate::field::{DomainBox, MatrixField, VectorField};
use crate::integrator::PathEnsemble;
use crate::io::{fmt_exact, write_atomic, write_json};
use crate::model::SdeModel;
use crate::sense::SenseParameter;

/// Stability factor: `dt ≤ CFL · Δx² / max D`.
pub const CFL: f64 = 0.4;

/// Uniform grid `lo = x_0 < … < x_{n−1} = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Axis> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || n < 3 {
            return Err(Error::contract("axis needs finite lo < hi and at least 3 nodes"));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.n - 1 {
            self.hi
        } else {
            self.lo + j as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Control volume (trapezoid weight) of node `j`.
    pub fn volume(&self, j: usize) -> f64 {
        if j == 0 || j == self.n - 1 {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }

    /// Same axis with the spacing halved (`2n − 1` nodes).
    pub fn refined(&self) -> Axis {
        Axis {
            n: 2 * self.n - 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero flux at both ends.
    #[default]
    Reflecting,
    /// `w = 0` at both ends; outflow is booked in the ledger.
    Absorbing,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MassLedger {
    pub initial: f64,
    /// Mass that left through absorbing ends.
    pub absorbed: f64,
    /// Total negative mass removed by clamping.
    pub clamped: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub t: f64,
    pub boundary: Boundary,
    pub ledger: MassLedger,
}

impl DensityGrid {
    pub fn new(axis: Axis, values: Vec<f64>, boundary: Boundary) -> Result<DensityGrid> {
        if values.len() != axis.n {
            return Err(Error::contract("density length differs from the axis"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::contract("density values must be finite and nonnegative"));
        }
        let mut g = DensityGrid {
            axis,
            values,
            t: 0.0,
            boundary,
            ledger: MassLedger::default(),
        };
        g.ledger.initial = g.mass();
        Ok(g)
    }

    pub fn from_fn(axis: Axis, boundary: Boundary, f: impl Fn(f64) -> f64) -> Result<DensityGrid> {
        DensityGrid::new(axis, axis.nodes().into_iter().map(f).collect(), boundary)
    }

    /// Trapezoid integral.
    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, w)| w * self.axis.volume(j))
            .sum()
    }

    /// Scaled to unit mass (ledger reset).
    pub fn normalized(&self) -> Result<DensityGrid> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::contract("cannot normalize a density with zero mass"));
        }
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v /= m);
        g.ledger = MassLedger {
            initial: 1.0,
            ..MassLedger::default()
        };
        Ok(g)
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, w)| w * f(self.axis.x(j)) * self.axis.volume(j))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(|x| (x - m) * (x - m)) / self.mass()
    }

    /// Cumulative trapezoid integral at every node.
    pub fn cdf(&self) -> Vec<f64> {
        let h = self.axis.dx();
        let mut out = Vec::with_capacity(self.axis.n);
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Linear interpolation; zero outside the axis.
    pub fn interpolate(&self, x: f64) -> f64 {
        let a = &self.axis;
        if !(x >= a.lo && x <= a.hi) {
            return 0.0;
        }
        let s = (x - a.lo) / a.dx();
        let j = (s.floor() as usize).min(a.n - 2);
        let f = s - j as f64;
        self.values[j] * (1.0 - f) + self.values[j + 1] * f
    }

    /// CSV with header `x,w`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,w\n");
        for (j, w) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{}", fmt_exact(self.axis.x(j)), fmt_exact(*w));
        }
        s
    }

    pub fn metadata(&self) -> DensityMetadata {
        DensityMetadata {
            t: self.t,
            boundary: self.boundary,
            axis: self.axis,
            mass: self.mass(),
            ledger: self.ledger,
        }
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        write_json(&dir.join(format!("{stem}.json")), &self.metadata())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMetadata {
    pub t: f64,
    pub boundary: Boundary,
    pub axis: Axis,
    pub mass: f64,
    pub ledger: MassLedger,
}

/// Largest stable time step for `model` on `axis`.
pub fn max_stable_dt(model: &SdeModel, axis: &Axis) -> Result<f64> {
    let (_, d) = coefficients(model, axis)?;
    let dmax = d.iter().copied().fold(0.0, f64::max);
    Ok(if dmax > 0.0 {
        CFL * axis.dx() * axis.dx() / dmax
    } else {
        f64::INFINITY
    })
}

/// Itô drift `a + α a_sp` and `D = b²` at the nodes.
fn coefficients(model: &SdeModel, axis: &Axis) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.state_dim() != 1 || model.noise_dim() != 1 {
        return Err(Error::contract("the Fokker-Planck solver is one-dimensional"));
    }
    let mut drift = Vec::with_capacity(axis.n);
    let mut diff = Vec::with_capacity(axis.n);
    for x in axis.nodes() {
        drift.push(ito_equivalent_drift(model, &[x])?[0]);
        let b = model.noise().eval(&[x])?[(0, 0)];
        diff.push(b * b);
    }
    Ok((drift, diff))
}

/// Evolves `w0` to `w0.t + t_end` under the model's Fokker-Planck operator.
/// `dt` is an upper bound; the step actually used is `t_end / ceil(t_end / dt)`.
pub fn fpe_evolve(model: &SdeModel, w0: &DensityGrid, t_end: f64, dt: f64) -> Result<DensityGrid> {
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::config("dt", "T must be nonnegative and dt positive"));
    }
    let axis = w0.axis;
    let (a, d) = coefficients(model, &axis)?;
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let h = axis.dx();
    let max_dt = if dmax > 0.0 { CFL * h * h / dmax } else { f64::INFINITY };
    if dt > max_dt {
        return Err(Error::Stability { dt, max_dt });
    }
    let steps = (t_end / dt).ceil() as u64;
    let mut out = w0.clone();
    if steps == 0 {
        return Ok(out);
    }
    let k = t_end / steps as f64;
    let n = axis.n;
    let w = &mut out.values;
    let mut flux = vec![0.0; n - 1];
    let mut clamped = 0.0;
    let mut absorbed = 0.0;
    if out.boundary == Boundary::Absorbing {
        absorbed += (w[0] + w[n - 1]) * 0.5 * h;
        w[0] = 0.0;
        w[n - 1] = 0.0;
    }
    for _ in 0..steps {
        for j in 0..n - 1 {
            flux[j] = 0.5 * (a[j] * w[j] + a[j + 1] * w[j + 1])
                - 0.5 * (d[j + 1] * w[j + 1] - d[j] * w[j]) / h;
        }
        match out.boundary {
            Boundary::Reflecting => {
                w[0] -= k * flux[0] / (0.5 * h);
                w[n - 1] += k * flux[n - 2] / (0.5 * h);
            }
            Boundary::Absorbing => {
                // outflow through the end half-cells
                absorbed += k * (flux[n - 2] - flux[0]);
            }
        }
        for j in 1..n - 1 {
            w[j] -= k * (flux[j] - flux[j - 1]) / h;
        }
        for (j, v) in w.iter_mut().enumerate() {
            if *v < 0.0 {
                clamped -= *v * axis.volume(j);
                *v = 0.0;
            }
        }
    }
    out.t += t_end;
    out.ledger.absorbed += absorbed;
    out.ledger.clamped += clamped;
    out.ledger.steps += steps;
    Ok(out)
}

/// `u_t = ½ u_zz` on `u0`'s axis: [`fpe_evolve`] on the model `a = 0, b = 1`.
pub fn heat_evolve(u0: &DensityGrid, t_end: f64, dt: f64) -> Result<DensityGrid> {
    fpe_evolve(&unit_heat_model(&u0.axis)?, u0, t_end, dt)
}

fn unit_heat_model(axis: &Axis) -> Result<SdeModel> {
    let dom = DomainBox::interval(axis.lo, axis.hi)?;
    SdeModel::new(
        "heat",
        VectorField::zero(dom.clone()),
        MatrixField::scalar(dom, |_| 1.0, |_| 0.0),
        SenseParameter::ITO,
    )
}

/// `w(x) = u(z(x)) |dz/dx|` on `x_axis`, with `u` interpolated linearly.
pub fn pushforward_density(chart: &CoordinateChart, u: &DensityGrid, x_axis: &Axis) -> Result<DensityGrid> {
    check_1d(chart)?;
    let zb = chart.z_box();
    let floor = u.values.iter().copied().fold(0.0, f64::max) * 1e-12;
    for (j, v) in u.values.iter().enumerate() {
        let z = u.axis.x(j);
        if *v > floor && !(z >= zb.lo()[0] && z <= zb.hi()[0]) {
            return Err(Error::ChartRange {
                value: vec![z],
                path: None,
            });
        }
    }
    let mut values = Vec::with_capacity(x_axis.n);
    for x in x_axis.nodes() {
        let z = chart.forward(&[x])?[0];
        let jac = chart.jacobian(&[x])?[(0, 0)].abs();
        values.push(u.interpolate(z) * jac);
    }
    let mut g = DensityGrid::new(*x_axis, values, u.boundary)?;
    g.t = u.t;
    Ok(g)
}

/// `u(z) = w(x(z)) |dx/dz|` on `z_axis`.
pub fn pullback_density(chart: &CoordinateChart, w: &DensityGrid, z_axis: &Axis) -> Result<DensityGrid> {
    check_1d(chart)?;
    let mut values = Vec::with_capacity(z_axis.n);
    for z in z_axis.nodes() {
        let x = chart.inverse(&[z])?;
        let jac = chart.jacobian(&x)?[(0, 0)].abs();
        values.push(w.interpolate(x[0]) / jac);
    }
    let mut g = DensityGrid::new(*z_axis, values, w.boundary)?;
    g.t = w.t;
    Ok(g)
}

fn check_1d(chart: &CoordinateChart) -> Result<()> {
    if chart.dim() != 1 {
        return Err(Error::contract("density transport needs a 1D chart"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityDistance {
    pub l1: f64,
    pub ks: f64,
}

/// Trapezoid L1 and the max CDF difference of two densities on one axis.
pub fn density_distance(w1: &DensityGrid, w2: &DensityGrid) -> Result<DensityDistance> {
    if w1.axis != w2.axis {
        return Err(Error::contract("densities live on different axes"));
    }
    let l1 = w1
        .values
        .iter()
        .zip(&w2.values)
        .enumerate()
        .map(|(j, (a, b))| (a - b).abs() * w1.axis.volume(j))
        .sum();
    let ks = w1
        .cdf()
        .iter()
        .zip(w2.cdf())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(DensityDistance { l1, ks })
}

/// Nearest-node histogram of coordinate `coord` at one recorded time,
/// normalized to unit mass over the samples that fall on the axis.
pub fn ensemble_to_density(ensemble: &PathEnsemble, time_index: usize, coord: usize, axis: &Axis) -> Result<DensityGrid> {
    if time_index >= ensemble.n_times() || coord >= ensemble.dim {
        return Err(Error::contract("time index or coordinate out of range"));
    }
    samples_to_density(&ensemble.marginal(time_index, coord), axis)
}

/// Nearest-node histogram of raw samples; samples off the axis are dropped.
pub fn samples_to_density(samples: &[f64], axis: &Axis) -> Result<DensityGrid> {
    let h = axis.dx();
    let half = 0.5 * h;
    let mut counts = vec![0u64; axis.n];
    let mut total = 0u64;
    for &x in samples {
        if x >= axis.lo - half && x <= axis.hi + half && x.is_finite() {
            let j = (((x - axis.lo) / h).round().max(0.0) as usize).min(axis.n - 1);
            if (j == 0 && x < axis.lo) || (j == axis.n - 1 && x > axis.hi) {
                continue;
            }
            counts[j] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::contract("no samples fall on the axis"));
    }
    let values = counts
        .iter()
        .enumerate()
        .map(|(j, &c)| c as f64 / (total as f64 * axis.volume(j)))
        .collect();
    DensityGrid::new(*axis, values, Boundary::Reflecting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ornstein_uhlenbeck;

    fn gaussian(axis: Axis, mean: f64, var: f64) -> DensityGrid {
        DensityGrid::from_fn(axis, Boundary::Reflecting, |x| {
            (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        })
        .unwrap()
    }

    #[test]
    fn heat_kernel_variance() {
        let axis = Axis::new(-8.0, 8.0, 512).unwrap();
        let u0 = gaussian(axis, 0.0, 0.25);
        let u = heat_evolve(&u0, 1.0, 2e-4).unwrap();
        assert!((u.variance() - 1.25).abs() / 1.25 < 0.01, "{}", u.variance());
        assert!((u.mass() - u0.mass()).abs() < 1e-12);
    }

    #[test]
    fn heat_is_the_constant_model() {
        let axis = Axis::new(-5.0, 5.0, 101).unwrap();
        let u0 = gaussian(axis, 0.3, 0.2);
        let m = crate::model::constant_noise(1.0, 5.0, SenseParameter::ITO).unwrap();
        let a = heat_evolve(&u0, 0.3, 1e-3).unwrap();
        let b = fpe_evolve(&m, &u0, 0.3, 1e-3).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn heat_is_shift_invariant() {
        let axis = Axis::new(-6.0, 6.0, 241).unwrap();
        let h = axis.dx();
        let a = heat_evolve(&gaussian(axis, 0.0, 0.05), 0.2, 1e-3).unwrap();
        let b = heat_evolve(&gaussian(axis, 10.0 * h, 0.05), 0.2, 1e-3).unwrap();
        for j in 40..200 {
            assert!((a.values[j] - b.values[j + 10]).abs() < 1e-9);
        }
    }

    #[test]
    fn stability_violation_reports_bound() {
        let axis = Axis::new(-1.0, 1.0, 101).unwrap();
        let u0 = gaussian(axis, 0.0, 0.1);
        match heat_evolve(&u0, 0.1, 1e-3) {
            Err(Error::Stability { max_dt, .. }) => assert!((max_dt - 0.4 * 0.02f64.powi(2)).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ou_reaches_stationary_density() {
        let m = ornstein_uhlenbeck(1.0, 1.0, 10.0, SenseParameter::ITO).unwrap();
        let axis = Axis::new(-5.0, 5.0, 201).unwrap();
        let w0 = gaussian(axis, 1.5, 0.1);
        let w = fpe_evolve(&m, &w0, 8.0, 0.9 * max_stable_dt(&m, &axis).unwrap()).unwrap();
        let z = std::f64::consts::PI.sqrt();
        let kl: f64 = w
            .values
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(j, p)| {
                let q = (-axis.x(j).powi(2)).exp() / z;
                p * (p / q).ln() * axis.volume(j)
            })
            .sum();
        assert!(kl.abs() < 1e-3, "{kl}");
    }

    #[test]
    fn absorbing_loses_mass_into_ledger() {
        let axis = Axis::new(-2.0, 2.0, 81).unwrap();
        let mut u0 = gaussian(axis, 0.0, 0.3);
        u0.boundary = Boundary::Absorbing;
        let u = heat_evolve(&u0, 1.0, 1e-3).unwrap();
        let lost = u0.mass() - u.mass();
        assert!(lost > 0.05);
        assert!((lost - u.ledger.absorbed).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let axis = Axis::new(-8.0, 8.0, 4001).unwrap();
        let a = gaussian(axis, 0.0, 1.0);
        let d = density_distance(&a, &a).unwrap();
        assert_eq!((d.l1, d.ks), (0.0, 0.0));
        let b = gaussian(axis, 0.1, 1.0);
        // max |Φ(x) − Φ(x − 0.1)| = Φ(0.05) − Φ(−0.05)
        let d = density_distance(&a, &b).unwrap();
        assert!((d.ks - 0.039_878_07).abs() < 1e-5, "{}", d.ks);
        let axis = Axis::new(0.0, 4.0, 401).unwrap();
        let bump = |c: f64| DensityGrid::from_fn(axis, Boundary::Reflecting, move |x| if (x - c).abs() <= 0.5 { 1.0 } else { 0.0 }).unwrap().normalized().unwrap();
        let d = density_distance(&bump(1.0), &bump(3.0)).unwrap();
        assert!((d.l1 - 2.0).abs() < 1e-12);
        let other = Axis::new(0.0, 4.0, 402).unwrap();
        assert!(density_distance(&bump(1.0), &DensityGrid::from_fn(other, Boundary::Reflecting, |_| 0.0).unwrap()).is_err());
    }

    #[test]
    fn histogram_examples() {
        let axis = Axis::new(-1.0, 1.0, 21).unwrap();
        let g = samples_to_density(&[0.3; 50], &axis).unwrap();
        assert_eq!(g.values.iter().filter(|v| **v > 0.0).count(), 1);
        assert!((g.mass() - 1.0).abs() < 1e-14);
        let g = samples_to_density(&[-0.02, 0.01, 0.04], &axis).unwrap();
        assert_eq!(g.values[0], 0.0);
        assert!((g.mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pushforward_uniform_through_linear_chart() {
        let quarter = MatrixField::constant(DomainBox::interval(-1.0, 2.0).unwrap(), nalgebra::DMatrix::from_element(1, 1, 0.25));
        let chart = crate::chart::build_chart_1d(&quarter, -1.0, 2.0, 0.0, 31).unwrap();
        let z_axis = Axis::new(0.0, 1.0, 101).unwrap();
        let u = DensityGrid::from_fn(z_axis, Boundary::Reflecting, |_| 1.0).unwrap();
        let x_axis = Axis::new(0.0, 0.5, 51).unwrap();
        let w = pushforward_density(&chart, &u, &x_axis).unwrap();
        assert!(w.values.iter().all(|v| (v - 2.0).abs() < 1e-9));
        assert!((w.mass() - 1.0).abs() < 1e-9);
        let back = pullback_density(&chart, &w, &z_axis).unwrap();
        assert!(back.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn pushforward_identity_chart() {
        let axis = Axis::new(-3.0, 3.0, 61).unwrap();
        let chart = CoordinateChart::identity(DomainBox::interval(-3.0, 3.0).unwrap());
        let u = gaussian(axis, 0.2, 0.5);
        let w = pushforward_density(&chart, &u, &axis).unwrap();
        for (a, b) in w.values.iter().zip(&u.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pushforward_outside_chart_is_range_error() {
        let chart = CoordinateChart::geometric(0.5, 1.0, 0.5, 2.0).unwrap();
        let u = gaussian(Axis::new(-5.0, 5.0, 101).unwrap(), 0.0, 1.0);
        let x_axis = Axis::new(0.5, 2.0, 51).unwrap();
        assert!(matches!(pushforward_density(&chart, &u, &x_axis), Err(Error::ChartRange { .. })));
    }
}
