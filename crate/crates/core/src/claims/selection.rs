use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{label, sense, ClaimId, ClaimReport, Comparator, FpeClaimConfig, ReportBuilder, SenseSelectionConfig};
use crate::chart::CoordinateChart;
use crate::error::{Error, Result};
use crate::fpe::{
    density_distance, fpe_evolve, heat_evolve, max_stable_dt, pullback_density, pushforward_density, Axis,
    Boundary, DensityGrid,
};
use crate::integrator::{pushforward_paths, simulate_coupled, simulate_ensemble_senses, CoupledMember, EnsembleOptions};
use crate::model::{constant_noise, geometric, ornstein_uhlenbeck, SdeModel};
use crate::sense::SenseParameter;
use crate::stats::ks_two_sample;
use crate::stream::derive_seed;

/// Outcome of one sense-selection ensemble run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub seed: u64,
    pub alphas: Vec<f64>,
    /// KS distance of each α-ensemble to the pushed-forward `Z = W` ensemble at `T`.
    pub ks: Vec<f64>,
    pub argmin_alpha: f64,
    pub unimodal: bool,
}

impl SelectionRun {
    fn ks_at(&self, alpha: f64) -> Option<f64> {
        self.alphas.iter().position(|&a| a == alpha).map(|i| self.ks[i])
    }

    /// Argmin at ½, `KS(½) < ks_max`, and the end points separated by `factor`.
    pub fn passes(&self, ks_max: f64, factor: f64) -> bool {
        let (Some(mid), Some(k0), Some(k1)) = (self.ks_at(0.5), self.ks_at(0.0), self.ks_at(1.0)) else {
            return false;
        };
        self.argmin_alpha == 0.5 && mid < ks_max && k0 > factor * mid && k1 > factor * mid
    }
}

/// Nonincreasing up to the minimum and nondecreasing after it.
fn is_unimodal(v: &[f64]) -> bool {
    let Some(k) = argmin(v) else { return false };
    v[..=k].windows(2).all(|w| w[1] <= w[0]) && v[k..].windows(2).all(|w| w[1] >= w[0])
}

fn argmin(v: &[f64]) -> Option<usize> {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b]))
}

fn geometric_setup(cfg: &SenseSelectionConfig) -> Result<(SdeModel, CoordinateChart, SdeModel)> {
    if !(cfg.x0 > 0.0) || !(cfg.sigma > 0.0) {
        return Err(Error::config("sense_selection", "x0 and sigma must be positive"));
    }
    // wide enough that no path of practical length reaches the edges
    let (lo, hi) = (cfg.x0 * 1e-4, cfg.x0 * 1e4);
    let model = geometric(cfg.sigma, 0.0, lo, hi, SenseParameter::STRATONOVICH)?;
    let chart = CoordinateChart::geometric(cfg.sigma, cfg.x0, lo, hi)?;
    let z_extent = chart.z_box().lo()[0].abs().min(chart.z_box().hi()[0].abs());
    let wiener = constant_noise(1.0, z_extent, SenseParameter::STRATONOVICH)?;
    Ok((model, chart, wiener))
}

/// The model at every sense, then `Z = W`, all on shared increments.
fn coupled<'a>(
    model: &'a SdeModel,
    wiener: &'a SdeModel,
    cfg: &'a SenseSelectionConfig,
    senses: &[SenseParameter],
) -> Vec<CoupledMember<'a>> {
    let mut members: Vec<CoupledMember> = senses
        .iter()
        .map(|&sense| CoupledMember {
            model,
            sense,
            x0: std::slice::from_ref(&cfg.x0),
        })
        .collect();
    members.push(CoupledMember {
        model: wiener,
        sense: SenseParameter::ITO,
        x0: &[0.0],
    });
    members
}

fn senses(alphas: &[f64]) -> Result<Vec<SenseParameter>> {
    alphas.iter().map(|&a| sense(a)).collect()
}

/// Simulates every α-ensemble and the `Z = W` ensemble with one seed, so
/// all of them share the same Wiener increments, and compares final
/// marginals.
pub fn sense_selection_run(cfg: &SenseSelectionConfig, seed: u64) -> Result<SelectionRun> {
    let (model, chart, wiener) = geometric_setup(cfg)?;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let opts = EnsembleOptions {
        record_stride: steps.max(1),
        ..Default::default()
    };
    let mut ens = simulate_coupled(&coupled(&model, &wiener, cfg, &senses(&cfg.alphas)?), cfg.t_end, cfg.dt, cfg.n_paths, seed, &opts)?;
    let z = ens.pop().expect("the Z = W member is last");
    let reference = pushforward_paths(&chart, &z)?.final_marginal(0);
    let ks: Vec<f64> = ens.iter().map(|e| ks_two_sample(&e.final_marginal(0), &reference)).collect();
    let k = argmin(&ks).ok_or_else(|| Error::config("alphas", "empty alpha grid"))?;
    Ok(SelectionRun {
        seed,
        alphas: cfg.alphas.clone(),
        argmin_alpha: cfg.alphas[k],
        unimodal: is_unimodal(&ks),
        ks,
    })
}

/// Mean over paths of `max_t |X(t) - exact(t)|` for α = ½ against
/// `x0 e^{σW}` and for α = 0 against `x0 e^{σW - σ²t/2}`.
fn pathwise_errors(cfg: &SenseSelectionConfig, seed: u64) -> Result<(f64, f64)> {
    let (model, _, wiener) = geometric_setup(cfg)?;
    let opts = EnsembleOptions::default();
    let n = cfg.pathwise_paths;
    let pair = [SenseParameter::STRATONOVICH, SenseParameter::ITO];
    let mut ens = simulate_coupled(&coupled(&model, &wiener, cfg, &pair), cfg.t_end, cfg.dt, n, seed, &opts)?;
    let w = ens.pop().expect("the Z = W member is last");
    let s = cfg.sigma;
    let mut err = [0.0; 2];
    for p in 0..n {
        let mut worst = [0.0f64; 2];
        for (k, &t) in w.times.iter().enumerate() {
            let wt = w.state(p, k)[0];
            let exact = [cfg.x0 * (s * wt).exp(), cfg.x0 * (s * wt - 0.5 * s * s * t).exp()];
            for i in 0..2 {
                worst[i] = worst[i].max((ens[i].state(p, k)[0] - exact[i]).abs());
            }
        }
        err[0] += worst[0];
        err[1] += worst[1];
    }
    Ok((err[0] / n as f64, err[1] / n as f64))
}

/// Largest pairwise KS distance between final marginals at every α for a
/// model with constant noise.
fn neutral_spread(model: &SdeModel, cfg: &SenseSelectionConfig, seed: u64) -> Result<f64> {
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let opts = EnsembleOptions {
        record_stride: steps.max(1),
        ..Default::default()
    };
    let ens = simulate_ensemble_senses(model, &senses(&cfg.alphas)?, &[0.0], cfg.t_end, cfg.dt, cfg.neutral_paths, seed, &opts)?;
    let finals: Vec<Vec<f64>> = ens.iter().map(|e| e.final_marginal(0)).collect();
    let mut worst = 0.0f64;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            worst = worst.max(ks_two_sample(&finals[i], &finals[j]));
        }
    }
    Ok(worst)
}

pub fn claim_sense_selection(cfg: &SenseSelectionConfig, master_seed: u64) -> Result<ClaimReport> {
    let mut b = ReportBuilder::new(
        ClaimId::SenseSelection,
        json!({
            "model": "geometric",
            "sigma": cfg.sigma,
            "x0": cfg.x0,
            "t_end": cfg.t_end,
            "dt": cfg.dt,
            "n_paths": cfg.n_paths,
            "alphas": cfg.alphas,
            "replications": cfg.replications,
            "pathwise_paths": cfg.pathwise_paths,
            "neutral_paths": cfg.neutral_paths,
            "master_seed": master_seed,
            "replication_seeds": "derive_seed(master_seed, r) for r >= 1",
        }),
    );
    let ks_max = b.threshold("ks_max", cfg.ks_max);
    let factor = b.threshold("separation_factor", cfg.separation_factor);
    let path_factor = b.threshold("pathwise_factor", cfg.pathwise_factor);
    let neutral_max = b.threshold("neutral_ks_max", cfg.neutral_ks_max);

    let main = sense_selection_run(cfg, master_seed)?;
    for (&a, &ks) in main.alphas.iter().zip(&main.ks) {
        b.info(format!("ks[{}]", label(a)), ks);
    }
    b.check("argmin_alpha", main.argmin_alpha, Comparator::Eq, 0.5);
    b.check("unimodal", main.unimodal as u8 as f64, Comparator::Eq, 1.0);
    let mid = main.ks_at(0.5).unwrap_or(f64::NAN);
    b.check("ks[0.5]_vs_max", mid, Comparator::Lt, ks_max);
    for end in [0.0, 1.0] {
        let ratio = main.ks_at(end).unwrap_or(f64::NAN) / mid;
        b.check(format!("separation[{}]", label(end)), ratio, Comparator::Gt, factor);
    }

    let mut passed = main.passes(ks_max, factor) as usize;
    for r in 1..cfg.replications {
        let run = sense_selection_run(cfg, derive_seed(master_seed, r as u64))?;
        b.info(format!("replication_ks_half[{r}]"), run.ks_at(0.5).unwrap_or(f64::NAN));
        passed += run.passes(ks_max, factor) as usize;
    }
    b.check("replications_passed", passed as f64, Comparator::Eq, cfg.replications as f64);

    let (err_half, err_ito) = pathwise_errors(cfg, master_seed)?;
    b.info("pathwise_error[0.5]", err_half);
    b.info("euler_error[0]", err_ito);
    b.check("pathwise_ratio", err_half / err_ito, Comparator::Lt, path_factor);

    let x_max = 50.0;
    let constant = constant_noise(1.0, x_max, SenseParameter::STRATONOVICH)?;
    let ou = ornstein_uhlenbeck(1.0, 1.0, x_max, SenseParameter::STRATONOVICH)?;
    b.check("neutral_spread[constant]", neutral_spread(&constant, cfg, master_seed)?, Comparator::Lt, neutral_max);
    b.check("neutral_spread[ou]", neutral_spread(&ou, cfg, master_seed)?, Comparator::Lt, neutral_max);
    b.note(
        "ensembles at every alpha and the Z = W ensemble share Wiener increments (same seed); KS compares \
         marginal laws at T. The pathwise check uses the same driving W.",
    );
    Ok(b.finish())
}

/// Initial density: Gaussian in `z = ln(x)/σ` with the given variance,
/// expressed on the x-axis.
fn lognormal_initial(axis: Axis, sigma: f64, z_var: f64) -> Result<DensityGrid> {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * z_var).sqrt();
    DensityGrid::from_fn(axis, Boundary::Reflecting, |x| {
        let z = x.ln() / sigma;
        norm * (-0.5 * z * z / z_var).exp() / (sigma * x)
    })?
    .normalized()
}

/// L1 distance between the heat route and direct evolution at each α.
fn fpe_l1(cfg: &FpeClaimConfig, grid: usize) -> Result<Vec<f64>> {
    let x_axis = Axis::new(cfg.x_lo, cfg.x_hi, grid)?;
    let chart = CoordinateChart::geometric(cfg.sigma, 1.0, cfg.x_lo, cfg.x_hi)?;
    let z_axis = Axis::new(chart.z_box().lo()[0], chart.z_box().hi()[0], grid)?;
    let w0 = lognormal_initial(x_axis, cfg.sigma, cfg.z0_variance)?;

    let u0 = pullback_density(&chart, &w0, &z_axis)?.normalized()?;
    let z_model = constant_noise(1.0, z_axis.lo.abs().max(z_axis.hi.abs()), SenseParameter::STRATONOVICH)?;
    let dt_z = cfg.dt_fraction * max_stable_dt(&z_model, &z_axis)?;
    let heat = heat_evolve(&u0, cfg.t_end, dt_z)?;
    let routed = pushforward_density(&chart, &heat, &x_axis)?;

    cfg.alphas
        .iter()
        .map(|&a| {
            let model = geometric(cfg.sigma, 0.0, cfg.x_lo, cfg.x_hi, sense(a)?)?;
            let dt = cfg.dt_fraction * max_stable_dt(&model, &x_axis)?;
            let direct = fpe_evolve(&model, &w0, cfg.t_end, dt)?;
            Ok(density_distance(&routed, &direct)?.l1)
        })
        .collect()
}

pub fn claim_fpe_alpha_independence(cfg: &FpeClaimConfig) -> Result<ClaimReport> {
    if !(cfg.x_lo > 0.0) {
        return Err(Error::config("fpe_alpha_independence.x_lo", "the geometric chart needs x_lo > 0"));
    }
    let mut b = ReportBuilder::new(
        ClaimId::FpeAlphaIndependence,
        json!({
            "model": "geometric",
            "sigma": cfg.sigma,
            "x_range": [cfg.x_lo, cfg.x_hi],
            "grid": cfg.grid,
            "t_end": cfg.t_end,
            "z0_variance": cfg.z0_variance,
            "dt_fraction": cfg.dt_fraction,
            "alphas": cfg.alphas,
            "refine": cfg.refine,
            "boundary": "reflecting",
        }),
    );
    let l1_match = b.threshold("l1_match", cfg.l1_match);
    let l1_sep = b.threshold("l1_separation", cfg.l1_separation);

    let l1 = fpe_l1(cfg, cfg.grid)?;
    for (&a, &v) in cfg.alphas.iter().zip(&l1) {
        b.info(format!("l1[{}]", label(a)), v);
    }
    let k = argmin(&l1).ok_or_else(|| Error::config("alphas", "empty alpha grid"))?;
    b.check("argmin_alpha", cfg.alphas[k], Comparator::Eq, 0.5);
    let at = |alpha: f64| {
        cfg.alphas
            .iter()
            .position(|&a| a == alpha)
            .map_or(f64::NAN, |i| l1[i])
    };
    b.check("l1[0.5]_vs_match", at(0.5), Comparator::Le, l1_match);
    b.check("l1[0]_vs_separation", at(0.0), Comparator::Ge, l1_sep);
    b.check("l1[1]_vs_separation", at(1.0), Comparator::Ge, l1_sep);

    if cfg.refine {
        let fine_cfg = FpeClaimConfig {
            alphas: vec![0.5],
            ..cfg.clone()
        };
        let fine = fpe_l1(&fine_cfg, 2 * cfg.grid - 1)?[0];
        b.check("l1_refined[0.5]", fine, Comparator::Lt, at(0.5));
    }

    // D ≡ 1: every α evolves the same equation
    let axis = Axis::new(-6.0, 6.0, cfg.grid)?;
    let w0 = DensityGrid::from_fn(axis, Boundary::Reflecting, |x| (-2.0 * x * x).exp())?.normalized()?;
    let mut finals = Vec::new();
    for &a in &cfg.alphas {
        let model = constant_noise(1.0, 6.0, sense(a)?)?;
        let dt = cfg.dt_fraction * max_stable_dt(&model, &axis)?;
        finals.push(fpe_evolve(&model, &w0, cfg.t_end, dt)?);
    }
    let mut spread = 0.0f64;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            spread = spread.max(density_distance(&finals[i], &finals[j])?.l1);
        }
    }
    b.check("unit_diffusion_spread", spread, Comparator::Le, l1_match);
    Ok(b.finish())
}
