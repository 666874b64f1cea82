use sense_forge::chart::{
    build_chart_1d, build_chart_2d, build_chart_diagonal, transform_diffusion, validate_chart, ChartKind,
    ChartRecord, CoordinateChart, EigenMode,
};
use sense_forge::field::{DomainBox, MatrixField};
use sense_forge::fpe::{pullback_density, pushforward_density, Axis, Boundary, DensityGrid};
use sense_forge::model::{asinh, diag2d, geometric};
use sense_forge::{Error, SenseParameter};

fn log_points(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![(lo.ln() + (hi / lo).ln() * (i as f64 + 0.5) / n as f64).exp()])
        .collect()
}

#[test]
fn tabulated_geometric_chart_matches_the_logarithm() {
    let sigma = 0.5;
    let m = geometric(sigma, 0.0, 0.1, 10.0, SenseParameter::STRATONOVICH).unwrap();
    let chart = build_chart_1d(&MatrixField::diffusion_of(m.noise()), 0.1, 10.0, 2.0, 513).unwrap();
    assert_eq!(chart.kind(), ChartKind::Tabulated1d);
    for p in log_points(0.1, 10.0, 200) {
        let z = chart.forward(&p).unwrap()[0];
        assert!((z - (p[0] / 2.0).ln() / sigma).abs() < 1e-9, "x = {}", p[0]);
    }
}

#[test]
fn tabulated_asinh_chart_matches_asinh() {
    let m = asinh(1e3, SenseParameter::STRATONOVICH).unwrap();
    let chart = build_chart_1d(&MatrixField::diffusion_of(m.noise()), -10.0, 10.0, 0.0, 513).unwrap();
    for k in 0..=200 {
        let x = -10.0 + 0.1 * k as f64;
        assert!((chart.forward(&[x]).unwrap()[0] - x.asinh()).abs() < 1e-9);
    }
    let analytic = CoordinateChart::asinh(-10.0, 10.0).unwrap();
    assert_eq!(analytic.forward(&[3.0]).unwrap()[0], 3f64.asinh());
}

#[test]
fn diag2d_chart_is_a_logarithm_per_axis() {
    let m = diag2d(0.1, 10.0, SenseParameter::STRATONOVICH).unwrap();
    let d = MatrixField::diffusion_of(m.noise());
    let chart = build_chart_diagonal(&d, &[0.1; 2], &[10.0; 2], &[1.0; 2], 513, EigenMode::Diffusion).unwrap();
    let x = [0.37, 6.2];
    let z = chart.forward(&x).unwrap();
    assert!((z[0] - x[0].ln()).abs() < 1e-9 && (z[1] - x[1].ln()).abs() < 1e-9);
    let back = chart.inverse(&z).unwrap();
    assert!((back[0] - x[0]).abs() < 1e-10 && (back[1] - x[1]).abs() < 1e-10);
}

#[test]
fn numeric_chart_flattens_a_rotated_metric() {
    // D = R diag(f(u), g(v)) Rᵀ with (u, v) = Rᵀ x, so the eigenframe is integrable
    let (sn, cs) = 0.4f64.sin_cos();
    let dom = DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let d = MatrixField::new(2, 2, dom, move |x, o| {
        let u = cs * x[0] + sn * x[1];
        let v = -sn * x[0] + cs * x[1];
        let (f, g) = (1.0 + 0.5 * u * u, 3.0 + v);
        o.copy_from_slice(&[
            cs * cs * f + sn * sn * g,
            cs * sn * (f - g),
            cs * sn * (f - g),
            sn * sn * f + cs * cs * g,
        ]);
    });
    let chart = build_chart_2d(&d, [-1.0; 2], [1.0; 2], [0.0; 2], 33, 33).unwrap();
    assert_eq!(chart.kind(), ChartKind::Numeric2d);
    let tol = ChartKind::Numeric2d.tolerance();
    for x in [[0.3, -0.4], [-0.7, 0.6], [0.1, 0.9]] {
        let ds = transform_diffusion(&chart, &d, &x).unwrap();
        assert!((ds[(0, 0)] - 1.0).abs() < tol && (ds[(1, 1)] - 1.0).abs() < tol && ds[(0, 1)].abs() < tol);
    }
}

#[test]
fn sheared_metric_with_a_twisting_frame_is_rejected() {
    // flat, but the eigenvectors rotate along x2 and their one-forms are not closed
    let dom = DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let d = MatrixField::new(2, 2, dom, |x, o| {
        let s = 0.6 * x[1];
        o.copy_from_slice(&[1.0 + s * s, -s, -s, 1.0]);
    });
    match build_chart_2d(&d, [-1.0; 2], [1.0; 2], [0.0; 2], 17, 17) {
        Err(Error::ChartRejected { residual, tolerance, map }) => {
            assert!(residual > tolerance);
            assert_eq!(map.len(), 17 * 17);
        }
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn singular_noise_is_reported_at_its_zero() {
    let dom = DomainBox::interval(-1.0, 1.0).unwrap();
    let d = MatrixField::scalar(dom, |x| x * x, |x| 2.0 * x);
    match build_chart_1d(&d, -1.0, 1.0, 0.5, 512) {
        Err(Error::SingularNoise { abscissa }) => assert!(abscissa.abs() < 1e-2),
        other => panic!("expected singular noise, got {other:?}"),
    }
}

#[test]
fn validation_report_survives_the_record() {
    let m = geometric(0.5, 0.0, 0.1, 10.0, SenseParameter::STRATONOVICH).unwrap();
    let d = MatrixField::diffusion_of(m.noise());
    let chart = CoordinateChart::geometric(0.5, 1.0, 0.1, 10.0).unwrap();
    let report = validate_chart(&chart, &d, &log_points(0.1, 10.0, 1000)).unwrap();
    assert!(report.round_trip_max < 1e-8);
    assert!(report.diffusion_residual_max < 1e-8);
    assert!(report.spurious_residual_max < 1e-8);
    let record = chart.with_validation(report.clone()).to_record();
    let json = serde_json::to_string(&record).unwrap();
    let back: ChartRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back.validation, Some(report));
}

#[test]
fn densities_move_between_charts_without_losing_mass() {
    let chart = CoordinateChart::geometric(0.5, 1.0, 0.05, 8.0).unwrap();
    let x_axis = Axis::new(0.05, 8.0, 512).unwrap();
    let z_axis = Axis::new(chart.z_box().lo()[0], chart.z_box().hi()[0], 512).unwrap();
    let w = DensityGrid::from_fn(x_axis, Boundary::Reflecting, |x| (-((x - 1.5) / 0.4f64).powi(2)).exp())
        .unwrap()
        .normalized()
        .unwrap();
    let u = pullback_density(&chart, &w, &z_axis).unwrap();
    assert!((u.mass() - 1.0).abs() < 1e-3);
    let back = pushforward_density(&chart, &u, &x_axis).unwrap();
    assert!((back.mass() - 1.0).abs() < 1e-3);
}
