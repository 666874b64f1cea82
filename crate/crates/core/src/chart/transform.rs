//! Transport of diffusion, spurious drift and drift through a chart, and the
//! way back to an x-coordinate model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CoordinateChart;
use crate::diffusion::spurious_drift_from_noise;
use crate::error::{Error, Result};
use crate::field::{MatrixField, VectorField};
use crate::model::SdeModel;
use crate::sense::SenseParameter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub points: usize,
    /// max `|x(z(x)) − x| / max(1, |x|)`.
    pub round_trip_max: f64,
    /// max `‖J D Jᵀ − diag(kappa)‖_max`.
    pub diffusion_residual_max: f64,
    /// max `|a_sp|` computed from `D*` in z-coordinates.
    pub spurious_residual_max: f64,
}

/// `D*(z) = J D Jᵀ` at `x`.
pub fn transform_diffusion(chart: &CoordinateChart, diffusion: &MatrixField, x: &[f64]) -> Result<DMatrix<f64>> {
    let j = chart.jacobian(x)?;
    let d = diffusion.eval(x)?;
    Ok(&j * d * j.transpose())
}

/// Spurious drift of the transformed diffusion, `½ Σ_k ∂D*^{ik}/∂z^k`,
/// with the z-derivatives taken as `Σ_m ∂_m D*^{ik} (J⁻¹)_{mk}`.
pub(crate) fn spurious_in_chart(chart: &CoordinateChart, diffusion: &MatrixField, x: &[f64]) -> Result<Vec<f64>> {
    let n = chart.dim();
    let jinv = chart
        .jacobian(x)?
        .try_inverse()
        .ok_or_else(|| Error::SingularJacobian(x.to_vec()))?;
    let h = chart.second_order_steps(x);
    // rows (i*n + k), columns m: ∂_m D*^{ik}
    let grad = chart.fd(x, &h, n * n, |p| {
        let ds = transform_diffusion(chart, diffusion, p)?;
        Ok((0..n * n).map(|q| ds[(q / n, q % n)]).collect())
    })?;
    Ok((0..n)
        .map(|i| {
            let mut s = 0.0;
            for k in 0..n {
                for m in 0..n {
                    s += grad[(i * n + k, m)] * jinv[(m, k)];
                }
            }
            0.5 * s
        })
        .collect())
}

/// The spurious drift of a noise field, expressed in the chart's
/// coordinates; it vanishes when `D*` is constant.
pub fn transformed_spurious_drift(chart: &CoordinateChart, noise: &MatrixField, x: &[f64]) -> Result<Vec<f64>> {
    spurious_in_chart(chart, &MatrixField::diffusion_of(noise), x)
}

/// `a* = J a`, the drift transformed as a vector.
pub fn transform_drift_tensor(chart: &CoordinateChart, drift: &VectorField, x: &[f64]) -> Result<Vec<f64>> {
    let j = chart.jacobian(x)?;
    let a = DVector::from_vec(drift.eval(x)?);
    Ok((j * a).iter().copied().collect())
}

/// Itô-formula image of the model's Itô-equivalent drift:
/// `a* = J (a + α a_sp) + ½ ∂²z : D`.
pub fn transform_drift_ito(chart: &CoordinateChart, model: &SdeModel, x: &[f64]) -> Result<Vec<f64>> {
    let n = chart.dim();
    if model.state_dim() != n {
        return Err(Error::contract("chart and model dimensions differ"));
    }
    let alpha = model.sense().value();
    let mut a = model.drift().eval(x)?;
    if alpha != 0.0 {
        let sp = spurious_drift_from_noise(model.noise(), x)?;
        a.iter_mut().zip(sp).for_each(|(v, s)| *v += alpha * s);
    }
    let j = chart.jacobian(x)?;
    let hess = chart.hessian(x)?;
    let d = MatrixField::diffusion_of(model.noise()).eval(x)?;
    Ok((0..n)
        .map(|i| {
            let mut v = 0.0;
            for k in 0..n {
                v += j[(i, k)] * a[k];
            }
            v + 0.5 * hess[i].component_mul(&d).sum()
        })
        .collect())
}

/// The x-coordinate model of `dZ = a*(Z) dt + I_c dW`: drift `J⁻¹ a*(z(x))`
/// and noise `J⁻¹ I_c`, read in the Stratonovich sense (α = ½). Its
/// Itô-equivalent drift is `J⁻¹ a* + ½ a_sp`.
pub fn map_back_sde(chart: &CoordinateChart, z_drift: &VectorField) -> Result<SdeModel> {
    let n = chart.dim();
    if z_drift.dim() != n {
        return Err(Error::contract("z drift dimension differs from the chart"));
    }
    let x_box = chart.x_box().clone();
    // Jacobian must be invertible where we can check cheaply
    let mut probes = vec![chart.reference().to_vec(), x_box.lo().to_vec(), x_box.hi().to_vec()];
    probes.retain(|p| p.iter().all(|v| v.is_finite()));
    for p in &probes {
        if chart.jacobian(p)?.try_inverse().is_none() {
            return Err(Error::SingularJacobian(p.clone()));
        }
    }
    let scale: Vec<f64> = chart.kappa().iter().map(|k| k.unsigned_abs() as f64).collect();

    let c = chart.clone();
    let a = z_drift.clone();
    let drift = VectorField::new(x_box.clone(), move |x, out| {
        let v = c
            .forward(x)
            .and_then(|z| a.eval(&z))
            .and_then(|az| {
                let jinv = c
                    .jacobian(x)?
                    .try_inverse()
                    .ok_or_else(|| Error::SingularJacobian(x.to_vec()))?;
                Ok(jinv * DVector::from_vec(az))
            });
        match v {
            Ok(v) => out.copy_from_slice(v.as_slice()),
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    });
    let c = chart.clone();
    let noise = MatrixField::new(n, n, x_box, move |x, out| {
        match c.jacobian(x).ok().and_then(|j| j.try_inverse()) {
            Some(jinv) => {
                for i in 0..n {
                    for k in 0..n {
                        out[i * n + k] = jinv[(i, k)] * scale[k];
                    }
                }
            }
            None => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    });
    SdeModel::new(
        format!("{:?}-map-back", chart.kind()).to_lowercase(),
        drift,
        noise,
        SenseParameter::STRATONOVICH,
    )
}

/// Round-trip, `J D Jᵀ` and transformed spurious drift residuals at `points`.
pub fn validate_chart(chart: &CoordinateChart, diffusion: &MatrixField, points: &[Vec<f64>]) -> Result<ValidationReport> {
    let target = DMatrix::from_diagonal(&DVector::from_iterator(
        chart.dim(),
        chart.kappa().iter().map(|&k| k as f64),
    ));
    let mut report = ValidationReport {
        points: points.len(),
        round_trip_max: 0.0,
        diffusion_residual_max: 0.0,
        spurious_residual_max: 0.0,
    };
    for p in points {
        let z = chart.forward(p)?;
        let back = chart.inverse(&z)?;
        for (a, b) in back.iter().zip(p) {
            report.round_trip_max = report.round_trip_max.max((a - b).abs() / b.abs().max(1.0));
        }
        let ds = transform_diffusion(chart, diffusion, p)?;
        report.diffusion_residual_max = report.diffusion_residual_max.max((ds - &target).amax());
        let sp = spurious_in_chart(chart, diffusion, p)?;
        report.spurious_residual_max = sp.iter().fold(report.spurious_residual_max, |m, v| m.max(v.abs()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{build_chart_1d, build_chart_diagonal, EigenMode};
    use crate::diffusion::ito_equivalent_drift;
    use crate::field::DomainBox;
    use crate::model::{constant_noise, geometric};

    const SIGMA: f64 = 0.5;

    fn geo(mu: f64, alpha: SenseParameter) -> SdeModel {
        geometric(SIGMA, mu, 0.05, 20.0, alpha).unwrap()
    }

    fn geo_chart() -> CoordinateChart {
        CoordinateChart::geometric(SIGMA, 1.0, 0.1, 10.0).unwrap()
    }

    #[test]
    fn identity_chart_leaves_everything() {
        let m = constant_noise(1.3, 10.0, SenseParameter::HANGGI).unwrap();
        let c = CoordinateChart::identity(DomainBox::interval(-10.0, 10.0).unwrap());
        let d = MatrixField::diffusion_of(m.noise());
        assert_eq!(transform_diffusion(&c, &d, &[0.4]).unwrap()[(0, 0)], 1.3 * 1.3);
        assert_eq!(transformed_spurious_drift(&c, m.noise(), &[0.4]).unwrap(), vec![0.0]);
        let a = VectorField::new(DomainBox::interval(-10.0, 10.0).unwrap(), |x: &[f64], o: &mut [f64]| o[0] = x[0].sin());
        assert_eq!(transform_drift_tensor(&c, &a, &[0.4]).unwrap(), vec![0.4f64.sin()]);
    }

    #[test]
    fn geometric_chart_makes_diffusion_unit() {
        let m = geo(0.0, SenseParameter::ITO);
        let c = geo_chart();
        let d = MatrixField::diffusion_of(m.noise());
        for x in [0.1, 0.5, 1.0, 3.3, 10.0] {
            assert!((transform_diffusion(&c, &d, &[x]).unwrap()[(0, 0)] - 1.0).abs() < 1e-10);
            assert!(transformed_spurious_drift(&c, m.noise(), &[x]).unwrap()[0].abs() < 1e-8);
            // nonzero in x-coordinates
            assert!((spurious_drift_from_noise(m.noise(), &[x]).unwrap()[0] - SIGMA * SIGMA * x).abs() < 1e-12);
        }
    }

    #[test]
    fn tabulated_chart_spurious_drift_vanishes() {
        let m = geo(0.0, SenseParameter::ITO);
        let c = build_chart_1d(&MatrixField::diffusion_of(m.noise()), 0.1, 10.0, 1.0, 257).unwrap();
        for x in [0.15, 1.0, 7.0] {
            assert!(transformed_spurious_drift(&c, m.noise(), &[x]).unwrap()[0].abs() < 1e-8);
        }
    }

    #[test]
    fn drift_transform_examples() {
        let c = geo_chart();
        let mu = 0.3;
        let m = geo(mu, SenseParameter::ITO);
        for x in [0.2, 2.0, 9.0] {
            let t = transform_drift_tensor(&c, m.drift(), &[x]).unwrap()[0];
            assert!((t - mu / SIGMA).abs() < 1e-12);
        }
        let strat = geo(0.0, SenseParameter::STRATONOVICH);
        let ito = geo(0.0, SenseParameter::ITO);
        for x in [0.2, 2.0, 9.0] {
            assert!(transform_drift_ito(&c, &strat, &[x]).unwrap()[0].abs() < 1e-7);
            assert!((transform_drift_ito(&c, &ito, &[x]).unwrap()[0] + SIGMA / 2.0).abs() < 1e-7);
        }
    }

    #[test]
    fn ito_transform_on_linear_chart_is_tensor() {
        let dom = DomainBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let d = MatrixField::constant(dom.clone(), DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]));
        let c = build_chart_diagonal(&d, &[-3.0, -3.0], &[3.0, 3.0], &[0.0, 0.0], 33, EigenMode::Diffusion).unwrap();
        let noise = MatrixField::constant(dom.clone(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let drift = VectorField::new(dom, |x, o| o.copy_from_slice(&[x[1], -x[0]]));
        let m = SdeModel::new("lin", drift, noise, SenseParameter::HANGGI).unwrap();
        let p = [0.7, -1.2];
        let a = transform_drift_ito(&c, &m, &p).unwrap();
        let t = transform_drift_tensor(&c, m.drift(), &p).unwrap();
        assert!((a[0] - t[0]).abs() < 1e-9 && (a[1] - t[1]).abs() < 1e-9);
        assert!((t[0] - p[1] / 2.0).abs() < 1e-12 && (t[1] + p[0] / 3.0).abs() < 1e-12);
    }

    #[test]
    fn map_back_examples() {
        let c = geo_chart();
        let zero = VectorField::zero(DomainBox::interval(-100.0, 100.0).unwrap());
        let m = map_back_sde(&c, &zero).unwrap();
        assert_eq!(m.sense(), SenseParameter::STRATONOVICH);
        for x in [0.3, 1.0, 6.0] {
            let ito = ito_equivalent_drift(&m, &[x]).unwrap()[0];
            assert!((ito - 0.5 * SIGMA * SIGMA * x).abs() < 1e-8, "{ito}");
            let b = m.noise().eval(&[x]).unwrap()[(0, 0)];
            assert!((b - SIGMA * x).abs() < 1e-12);
        }
        let mu = 0.2;
        let konst = VectorField::constant(DomainBox::interval(-100.0, 100.0).unwrap(), vec![mu / SIGMA]);
        let m = map_back_sde(&c, &konst).unwrap();
        for x in [0.3, 1.0, 6.0] {
            let ito = ito_equivalent_drift(&m, &[x]).unwrap()[0];
            assert!((ito - (mu * x + 0.5 * SIGMA * SIGMA * x)).abs() < 1e-8);
        }
    }

    #[test]
    fn map_back_round_trip() {
        let c = geo_chart();
        let m = geo(0.15, SenseParameter::STRATONOVICH);
        let cc = c.clone();
        let mm = m.clone();
        let z_drift = VectorField::new(c.z_box().clone(), move |z, o| {
            let x = cc.inverse(z).unwrap();
            o[0] = transform_drift_ito(&cc, &mm, &x).unwrap()[0];
        });
        let back = map_back_sde(&c, &z_drift).unwrap();
        for x in [0.2, 1.0, 4.0, 9.5] {
            let want = ito_equivalent_drift(&m, &[x]).unwrap()[0];
            let got = ito_equivalent_drift(&back, &[x]).unwrap()[0];
            assert!((want - got).abs() < 1e-6, "{want} {got}");
        }
    }

    #[test]
    fn validation_report_for_diagonal_chart() {
        let dom = DomainBox::new(vec![0.1, 0.1], vec![10.0, 10.0]).unwrap();
        let d = MatrixField::new(2, 2, dom, |x, o| o.copy_from_slice(&[x[0] * x[0], 0.0, 0.0, 1.0 + x[1]]));
        let c = build_chart_diagonal(&d, &[0.1, 0.1], &[10.0, 10.0], &[1.0, 1.0], 257, EigenMode::Diffusion).unwrap();
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![0.1 + i as f64, 10.0 - i as f64]).collect();
        let r = validate_chart(&c, &d, &pts).unwrap();
        assert!(r.round_trip_max < 1e-8);
        assert!(r.diffusion_residual_max < 1e-8);
        assert!(r.spurious_residual_max < 1e-6, "{r:?}");
    }
}
