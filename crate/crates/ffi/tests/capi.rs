use std::ffi::{CStr, CString};
use std::ptr;

use sense_forge_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = sf_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { sf_string_free(p) };
    s
}

fn model(json: &str) -> *mut SfModel {
    let mut m = ptr::null_mut();
    let c = cstr(json);
    assert_eq!(unsafe { sf_model_new(c.as_ptr(), &mut m) }, SfStatus::Ok, "{}", last_error());
    m
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(sf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn geometric_spurious_drift_is_sigma_squared_x() {
    let m = model(r#"{"model": {"kind": "registry", "name": "geometric", "params": {"sigma": 0.5}}, "alpha": 0.5}"#);
    unsafe {
        assert_eq!(sf_model_state_dim(m), 1);
        assert_eq!(sf_model_noise_dim(m), 1);
        assert_eq!(sf_model_alpha(m), 0.5);
        let x = [2.0];
        let mut out = [0.0];
        assert_eq!(sf_model_spurious_drift(m, x.as_ptr(), 1, out.as_mut_ptr(), 1), SfStatus::Ok);
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert_eq!(sf_model_ito_drift(m, x.as_ptr(), 1, out.as_mut_ptr(), 1), SfStatus::Ok);
        assert!((out[0] - 0.25).abs() < 1e-12);

        // x + α σ² x dt + σ x dW
        let dw = [0.1];
        assert_eq!(sf_model_step(m, x.as_ptr(), 1, dw.as_ptr(), 1, 0.01, out.as_mut_ptr(), 1), SfStatus::Ok);
        assert!((out[0] - (2.0 + 0.5 * 0.25 * 2.0 * 0.01 + 0.5 * 2.0 * 0.1)).abs() < 1e-12);
        sf_model_free(m);
    }
}

#[test]
fn bad_configs_report_the_config_status() {
    let mut m = ptr::null_mut();
    let c = cstr(r#"{"alpha": 1.5}"#);
    assert_eq!(unsafe { sf_model_new(c.as_ptr(), &mut m) }, SfStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("alpha"));
    let c = cstr("{not json");
    assert_eq!(unsafe { sf_model_new(c.as_ptr(), &mut m) }, SfStatus::Config);
    assert_eq!(unsafe { sf_model_new(ptr::null(), ptr::null_mut()) }, SfStatus::NullArgument);
}

#[test]
fn null_and_short_buffers_are_rejected() {
    let m = model("");
    let x = [1.0];
    let mut out = [0.0];
    unsafe {
        assert_eq!(sf_model_spurious_drift(ptr::null(), x.as_ptr(), 1, out.as_mut_ptr(), 1), SfStatus::NullArgument);
        assert_eq!(sf_model_spurious_drift(m, x.as_ptr(), 1, out.as_mut_ptr(), 0), SfStatus::BufferTooSmall);
        assert!(last_error().contains("buffer"));
        assert_eq!(sf_model_state_dim(ptr::null()), 0);
        assert!(sf_model_alpha(ptr::null()).is_nan());
        sf_model_free(m);
        sf_model_free(ptr::null_mut());
    }
}

#[test]
fn steps_leaving_the_domain_report_domain() {
    let m = model(r#"{"model": {"kind": "registry", "name": "constant", "params": {"x_max": 0.5}}}"#);
    let (x, dw) = ([0.4], [1.0]);
    let mut out = [0.0];
    let s = unsafe { sf_model_step(m, x.as_ptr(), 1, dw.as_ptr(), 1, 0.01, out.as_mut_ptr(), 1) };
    assert_eq!(s, SfStatus::Domain);
    unsafe { sf_model_free(m) };
}

#[test]
fn simulation_matches_the_library_bit_for_bit() {
    let json = r#"{"n_paths": 64, "t_end": 0.5, "dt": 0.01, "record_stride": 10, "seed": 11}"#;
    let m = model(json);
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(sf_simulate(m, &mut e), SfStatus::Ok);
        assert_eq!(sf_ensemble_n_paths(e), 64);
        assert_eq!(sf_ensemble_n_times(e), 6);
        assert_eq!(sf_ensemble_dim(e), 1);
        assert_eq!(sf_ensemble_domain_exits(e), 0);
        let mut times = vec![0.0; 6];
        assert_eq!(sf_ensemble_times(e, times.as_mut_ptr(), times.len()), SfStatus::Ok);
        assert_eq!(times[5], 0.5);
        let mut states = vec![0.0; 64 * 6];
        assert_eq!(sf_ensemble_states(e, states.as_mut_ptr(), states.len()), SfStatus::Ok);
        let mut fin = vec![0.0; 64];
        assert_eq!(sf_ensemble_final(e, 0, fin.as_mut_ptr(), fin.len()), SfStatus::Ok);
        assert_eq!(sf_ensemble_final(e, 1, fin.as_mut_ptr(), fin.len()), SfStatus::Config);

        let cfg = sense_forge::config::RunConfig::from_json(json).unwrap();
        let model = cfg.build_model().unwrap();
        let opts = sense_forge::integrator::EnsembleOptions {
            record_stride: 10,
            ..Default::default()
        };
        let want = sense_forge::integrator::simulate_ensemble(&model, &[1.0], 0.5, 0.01, 64, 11, &opts).unwrap();
        assert_eq!(states, want.states);
        assert_eq!(fin, want.final_marginal(0));
        sf_ensemble_free(e);
        sf_model_free(m);
    }
}

#[test]
fn geometric_chart_round_trips_and_serializes() {
    let m = model(r#"{"model": {"kind": "registry", "name": "geometric", "params": {"sigma": 0.5}}}"#);
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(sf_chart_build(m, &mut c), SfStatus::Ok, "{}", last_error());
        assert_eq!(sf_chart_dim(c), 1);
        let x = [3.0];
        let (mut z, mut back) = ([0.0], [0.0]);
        assert_eq!(sf_chart_forward(c, x.as_ptr(), 1, z.as_mut_ptr(), 1), SfStatus::Ok);
        assert_eq!(sf_chart_inverse(c, z.as_ptr(), 1, back.as_mut_ptr(), 1), SfStatus::Ok);
        assert!((back[0] - 3.0).abs() < 1e-9);
        let mut s = ptr::null_mut();
        assert_eq!(sf_chart_to_json(c, &mut s), SfStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(s).to_str().unwrap()).unwrap();
        assert_eq!(v["kind"], "tabulated1d");
        sf_string_free(s);
        sf_chart_free(c);
        sf_model_free(m);
    }
}

#[test]
fn vanishing_noise_reports_singular() {
    let m = model(
        r#"{"model": {"kind": "expression", "drift": ["0"], "noise": [["x1"]], "lo": [-1], "hi": [1]}}"#,
    );
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { sf_chart_build(m, &mut c) }, SfStatus::Singular);
    assert!(c.is_null());
    unsafe { sf_model_free(m) };
}

#[test]
fn claims_run_through_the_abi() {
    let mut s = ptr::null_mut();
    let id = cstr("drift_projection");
    assert_eq!(unsafe { sf_run_claim(ptr::null(), id.as_ptr(), &mut s) }, SfStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(s) }.to_str().unwrap()).unwrap();
    assert_eq!(v["claim_id"], "drift_projection");
    assert_eq!(v["verdict"], "flagged_ambiguous");
    unsafe { sf_string_free(s) };

    let bad = cstr("no_such_claim");
    assert_eq!(unsafe { sf_run_claim(ptr::null(), bad.as_ptr(), &mut s) }, SfStatus::Config);
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sense_forge.h")).unwrap();
    for name in [
        "sf_version",
        "sf_last_error_message",
        "sf_string_free",
        "sf_model_new",
        "sf_model_free",
        "sf_simulate",
        "sf_ensemble_states",
        "sf_chart_build",
        "sf_chart_forward",
        "sf_run_claim",
        "typedef struct SfModel SfModel",
        "SF_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
