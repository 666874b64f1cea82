use std::path::Path;
use std::process::{Command, Output};

fn sense_forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sense-forge"))
        .current_dir(dir)
        .env("SENSE_FORGE_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_writes_identical_files_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--model", "geometric", "--alpha", "0.5", "--n", "1000", "--seed", "7"];
    let a = sense_forge(dir.path(), &[&args[..], &["--out", "a"]].concat());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = sense_forge(dir.path(), &[&args[..], &["--out", "b"]].concat());
    assert_eq!(code(&b), 0);
    let csv = read(dir.path().join("a/ensemble.csv"));
    assert_eq!(csv.lines().next(), Some("path_id,t,x1"));
    assert_eq!(csv.lines().count(), 1 + 1000 * 101);
    assert_eq!(csv, read(dir.path().join("b/ensemble.csv")));
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path().join("a/ensemble.json"))).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["n_paths"], 1000);
}

#[test]
fn out_of_range_alpha_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sense_forge(dir.path(), &["simulate", "--alpha", "1.5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("alpha must lie in [0,1]"));
    let out = sense_forge(dir.path(), &["fpe", "--alpha", "-0.1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"fpe": {"initial_std": -1}}"#).unwrap();
    let out = sense_forge(dir.path(), &["fpe", "--config", "c.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("fpe.initial_std"));
    std::fs::write(dir.path().join("u.json"), r#"{"n_pahts": 3}"#).unwrap();
    assert_eq!(code(&sense_forge(dir.path(), &["simulate", "--config", "u.json"])), 2);
    assert_eq!(code(&sense_forge(dir.path(), &["simulate", "--model", "nope"])), 2);
}

#[test]
fn exceeding_the_exit_budget_returns_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"model": {"kind": "registry", "name": "constant", "params": {"x_max": 0.5}}}"#,
    )
    .unwrap();
    let out = sense_forge(dir.path(), &["simulate", "--config", "c.json", "--n", "200"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(dir.path().join("out/ensemble.csv").exists());
}

#[test]
fn geometric_transform_reports_small_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = sense_forge(dir.path(), &["transform", "--model", "geometric"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/validation.json"))).unwrap();
    assert!(v["round_trip_max"].as_f64().unwrap() < 1e-8);
    assert!(v["diffusion_residual_max"].as_f64().unwrap() < 1e-8);
    let chart: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/chart.json"))).unwrap();
    assert_eq!(chart["kind"], "tabulated1d");
    assert!(chart["validation"].is_object());
}

#[test]
fn zero_of_the_noise_returns_four() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"model": {"kind": "expression", "drift": ["0"], "noise": [["x1"]], "lo": [-1], "hi": [1]}}"#,
    )
    .unwrap();
    let out = sense_forge(dir.path(), &["transform", "--config", "c.json"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("not a zero point of b(x)"));
}

#[test]
fn rank_variation_returns_five() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"model": {"kind": "expression", "drift": ["0", "0"], "noise": [["1", "x1"], ["1", "0"]],
            "lo": [-1, -1], "hi": [1, 1]}, "chart": {"grid_2d": 9}}"#,
    )
    .unwrap();
    assert_eq!(code(&sense_forge(dir.path(), &["transform", "--config", "c.json"])), 5);
}

#[test]
fn unit_diffusion_gets_the_identity_chart() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"model": {"kind": "expression", "drift": ["0", "0"], "noise": [["1", "0"], ["0", "1"]],
            "lo": [-1, -1], "hi": [1, 1]}}"#,
    )
    .unwrap();
    let out = sense_forge(dir.path(), &["transform", "--config", "c.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let chart: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/chart.json"))).unwrap();
    assert_eq!(chart["kind"], "identity");
}

#[test]
fn fpe_densities_depend_on_alpha() {
    let dir = tempfile::tempdir().unwrap();
    for (alpha, out) in [("0", "ito"), ("0.5", "strat")] {
        let o = sense_forge(dir.path(), &["fpe", "--model", "geometric", "--alpha", alpha, "--grid", "128", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let first = read(dir.path().join("ito/density_000.csv"));
    assert_eq!(first, read(dir.path().join("strat/density_000.csv")));
    let last = read(dir.path().join("ito/density_005.csv"));
    assert_ne!(last, read(dir.path().join("strat/density_005.csv")));
    assert!(last.starts_with("x,w\n"));
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path().join("ito/density_005.json"))).unwrap();
    assert!((meta["t"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn unstable_fpe_step_returns_six() {
    let dir = tempfile::tempdir().unwrap();
    let out = sense_forge(dir.path(), &["fpe", "--dt", "0.1", "--grid", "128"]);
    assert_eq!(code(&out), 6);
    assert!(stderr(&out).contains("maximal admissible dt"));
}

#[test]
fn single_claim_verify_and_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"claims": {"alpha_integral_moments": {"n_samples": 200000}}}"#).unwrap();
    let out = sense_forge(dir.path(), &["verify", "--claim", "alpha_integral_moments", "--config", "c.json", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reports: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/reports.json"))).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 1);
    assert_eq!(reports[0]["claim_id"], "alpha_integral_moments");
    assert!(dir.path().join("out/alpha_integral_moments.json").exists());
    assert!(!dir.path().join("out/sense_selection.json").exists());

    let summary = read(dir.path().join("out/summary.md"));
    std::fs::remove_file(dir.path().join("out/summary.md")).unwrap();
    let out = sense_forge(dir.path(), &["report"]);
    assert_eq!(code(&out), 0);
    assert_eq!(read(dir.path().join("out/summary.md")), summary);

    let out = sense_forge(dir.path(), &["verify", "--claim", "no_such_claim"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn flagged_claims_do_not_fail_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = sense_forge(dir.path(), &["verify", "--claim", "drift_projection"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("flagged-ambiguous"));
}
