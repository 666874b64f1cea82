//! Acceptance criteria, run in order with one pass/fail line each.
//!
//! Runtimes are wall-clock on whatever machine runs the suite and count
//! toward each criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use sense_forge::claims::{
    claim_alpha_integral_moments, claim_drift_projection, claim_fpe_alpha_independence, claim_spurious_identity,
    claim_transformed_asp_zero, identity_families, sense_selection_run, AlphaIntegralConfig, ClaimReport,
    DriftProjectionConfig, FpeClaimConfig, SenseSelectionConfig, SpuriousIdentityConfig, TransformedAspConfig,
    Verdict,
};
use sense_forge::integrator::{simulate_ensemble_senses, EnsembleOptions};
use sense_forge::model::{constant_noise, ornstein_uhlenbeck};
use sense_forge::stats::ks_two_sample;
use sense_forge::stream::derive_seed;
use sense_forge::SenseParameter;

const SEED: u64 = 7;
const ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

struct Outcome {
    passed: bool,
    detail: String,
}

fn value(r: &ClaimReport, name: &str) -> f64 {
    r.value(name).unwrap_or_else(|| panic!("measurement `{name}` missing"))
}

fn label(a: f64) -> String {
    format!("{a}")
}

fn moments() -> Outcome {
    let (dt, n) = (0.01, 1_000_000usize);
    let cfg = AlphaIntegralConfig {
        dt,
        n_samples: n,
        alphas: ALPHAS.to_vec(),
        ..Default::default()
    };
    let r = claim_alpha_integral_moments(&cfg, SEED).expect("claim runs");
    let se = (dt / 2f64.sqrt()) / (n as f64).sqrt();
    let target = 0.5 * dt * dt;
    let mut passed = true;
    let mut worst = (0.0f64, 0.0f64);
    for a in ALPHAS {
        let l = label(a);
        let mean_err = (value(&r, &format!("mean[{l}]")) - a * dt).abs();
        let var_err = (value(&r, &format!("variance[{l}]")) - target).abs() / target;
        passed &= mean_err < 4.0 * se && var_err < 0.02;
        worst = (worst.0.max(mean_err / se), worst.1.max(var_err));
    }
    Outcome {
        passed,
        detail: format!("max |mean - a dt| = {:.2} SE, max variance rel. error = {:.4}", worst.0, worst.1),
    }
}

fn identity() -> Outcome {
    let cfg = SpuriousIdentityConfig {
        points: 100,
        ..Default::default()
    };
    let r = claim_spurious_identity(&cfg, SEED).expect("claim runs");
    let asserted: Vec<_> = identity_families(SEED).into_iter().filter(|f| f.asserted()).collect();
    let mut failing = Vec::new();
    for f in &asserted {
        let dev = value(&r, &format!("deviation_analytic[{}]", f.name));
        if !(dev < 1e-6) {
            failing.push(format!("{} {dev:.3e}", f.name));
        }
    }
    Outcome {
        passed: asserted.len() >= 5 && failing.is_empty(),
        detail: if failing.is_empty() {
            format!("{} families below 1e-6", asserted.len())
        } else {
            format!("{} families, above 1e-6: {}", asserted.len(), failing.join(", "))
        },
    }
}

fn charts() -> Outcome {
    let cfg = TransformedAspConfig {
        sigma: 0.5,
        geometric_range: [0.1, 10.0],
        points: 1000,
        ..Default::default()
    };
    let r = claim_transformed_asp_zero(&cfg).expect("claim runs");
    let mut worst = 0.0f64;
    for chart in ["geometric_analytic", "geometric_tabulated", "asinh_analytic", "asinh_tabulated"] {
        for quantity in ["round_trip", "diffusion_residual", "spurious_residual"] {
            worst = worst.max(value(&r, &format!("{quantity}[{chart}]")));
        }
    }
    Outcome {
        passed: worst < 1e-8,
        detail: format!("worst residual {worst:.3e} over 1000 points"),
    }
}

fn sense_selection() -> Outcome {
    let cfg = SenseSelectionConfig {
        sigma: 0.5,
        x0: 1.0,
        t_end: 1.0,
        dt: 1e-3,
        n_paths: 100_000,
        alphas: ALPHAS.to_vec(),
        ..Default::default()
    };
    let mut good = 0;
    let mut worst_half = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for r in 0..10u64 {
        let seed = if r == 0 { SEED } else { derive_seed(SEED, r) };
        let run = sense_selection_run(&cfg, seed).expect("ensemble runs");
        let (k0, half, k1) = (run.ks[0], run.ks[2], run.ks[4]);
        worst_half = worst_half.max(half);
        min_ratio = min_ratio.min(k0.min(k1) / half);
        if run.argmin_alpha == 0.5 && half < 0.01 && k0 > 5.0 * half && k1 > 5.0 * half {
            good += 1;
        }
    }
    Outcome {
        passed: good == 10,
        detail: format!("{good}/10 replications; max KS(1/2) = {worst_half:.4}, min KS(end)/KS(1/2) = {min_ratio:.1}"),
    }
}

fn fpe_route() -> Outcome {
    let cfg = FpeClaimConfig {
        grid: 512,
        t_end: 0.5,
        refine: false,
        ..Default::default()
    };
    let r = claim_fpe_alpha_independence(&cfg).expect("claim runs");
    let (l0, lh, l1) = (value(&r, "l1[0]"), value(&r, "l1[0.5]"), value(&r, "l1[1]"));
    Outcome {
        passed: lh <= 1e-2 && l0 >= 5e-2 && l1 >= 5e-2,
        detail: format!("L1 at 0, 1/2, 1: {l0:.4}, {lh:.2e}, {l1:.4}"),
    }
}

fn neutral_control() -> Outcome {
    let senses: Vec<SenseParameter> = ALPHAS.iter().map(|&a| SenseParameter::new(a).unwrap()).collect();
    let opts = EnsembleOptions {
        record_stride: 1000,
        ..Default::default()
    };
    let models = [
        constant_noise(1.0, 50.0, SenseParameter::ITO).unwrap(),
        ornstein_uhlenbeck(1.0, 1.0, 50.0, SenseParameter::ITO).unwrap(),
    ];
    let mut worst = 0.0f64;
    for m in &models {
        let ens = simulate_ensemble_senses(m, &senses, &[0.0], 1.0, 1e-3, 20_000, SEED, &opts).expect("ensemble runs");
        for i in 0..ens.len() {
            for j in i + 1..ens.len() {
                worst = worst.max(ks_two_sample(&ens[i].final_marginal(0), &ens[j].final_marginal(0)));
            }
        }
    }
    Outcome {
        passed: worst < 0.005,
        detail: format!("max pairwise KS {worst:.2e}"),
    }
}

fn drift_projection() -> Outcome {
    let cfg = DriftProjectionConfig::default();
    let r = claim_drift_projection(&cfg).expect("claim runs");
    let rows = cfg.betas.len() * 2 * cfg.alphas.len();
    let table = r.measurements.iter().filter(|m| m.name.starts_with("a_star[")).count();
    let checks = r.measurements.iter().filter(|m| m.name.starts_with("closed_form_error[")).count();
    let ito_zero = value(&r, "a_star[ito,beta=0,alpha=0.5]").abs();
    let tensor = value(&r, "a_star[tensor,beta=0.5,alpha=0]");
    Outcome {
        passed: r.verdict == Verdict::FlaggedAmbiguous
            && table == rows
            && checks == rows
            && r.failures().is_empty()
            && ito_zero < 1e-6
            && (tensor - 0.25).abs() < 1e-6,
        detail: format!("verdict {}, {table} table rows, {} closed-form misses", r.verdict, r.failures().len()),
    }
}

fn verify_twice() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut codes = Vec::new();
    for out in ["first", "second"] {
        let status = Command::new(env!("CARGO_BIN_EXE_sense-forge"))
            .current_dir(dir.path())
            .args(["verify", "--all", "--seed", "7", "--out", out])
            .output()
            .expect("binary runs");
        codes.push(status.status.code().unwrap_or(-1));
    }
    let json_files = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .unwrap()
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".json"))
            .collect();
        v.sort();
        v
    };
    let (a, b) = (dir.path().join("first"), dir.path().join("second"));
    let names = json_files(&a);
    let identical = names == json_files(&b)
        && names
            .iter()
            .all(|n| std::fs::read(a.join(n)).unwrap() == std::fs::read(b.join(n)).unwrap());
    Outcome {
        passed: identical && names.len() == 7,
        detail: format!("{} JSON files, byte-identical: {identical}, exit codes {codes:?}", names.len()),
    }
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("alpha-integral moments", 30.0, moments),
        ("spurious-drift identity", 5.0, identity),
        ("chart correctness", 5.0, charts),
        ("sense selection", 60.0, sense_selection),
        ("FPE route", 30.0, fpe_route),
        ("neutral-sense control", 30.0, neutral_control),
        ("drift projection table", 5.0, drift_projection),
        ("determinism", f64::INFINITY, verify_twice),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs < budget;
        let ok = outcome.passed && in_time;
        let budget_note = if budget.is_finite() {
            format!("{secs:.1} s of {budget:.0} s")
        } else {
            format!("{secs:.1} s")
        };
        println!(
            "criterion {} {name}: {} ({budget_note}) {}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            outcome.detail
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
