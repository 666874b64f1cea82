use serde_json::json;

use super::{label, sense, AlphaIntegralConfig, ClaimId, ClaimReport, Comparator, ReportBuilder};
use crate::error::{Error, Result};
use crate::stream::derive_seed;
use crate::wiener::{alpha_integral_ensemble, integral_statistics, IntegralMethod};

/// Mean and variance of the α-point stochastic integral over one step of
/// length `dt`, for every α on the grid.
pub fn claim_alpha_integral_moments(cfg: &AlphaIntegralConfig, master_seed: u64) -> Result<ClaimReport> {
    if cfg.n_samples < 2 || cfg.alphas.is_empty() {
        return Err(Error::config("alpha_integral_moments", "need n_samples >= 2 and a non-empty alpha grid"));
    }
    let mut b = ReportBuilder::new(
        ClaimId::AlphaIntegralMoments,
        json!({
            "dt": cfg.dt,
            "n_samples": cfg.n_samples,
            "substeps": cfg.substeps,
            "alphas": cfg.alphas,
            "method": "collapsed",
            "master_seed": master_seed,
        }),
    );
    let band = b.threshold("mean_se_band", cfg.mean_se_band);
    let rel_tol = b.threshold("variance_rel_tol", cfg.variance_rel_tol);
    let ratio_max = b.threshold("variance_ratio_max", cfg.variance_ratio_max);

    let target_var = 0.5 * cfg.dt * cfg.dt;
    let se = (cfg.dt / 2f64.sqrt()) / (cfg.n_samples as f64).sqrt();
    let mut variances = Vec::with_capacity(cfg.alphas.len());
    for (i, &a) in cfg.alphas.iter().enumerate() {
        let alpha = sense(a)?;
        let seed = derive_seed(master_seed, i as u64);
        let samples =
            alpha_integral_ensemble(alpha, cfg.dt, cfg.substeps, cfg.n_samples, seed, IntegralMethod::Collapsed)?;
        let stats = integral_statistics(&samples)?;
        let l = label(a);
        b.info(format!("mean[{l}]"), stats.mean);
        b.check(format!("mean_error_in_se[{l}]"), (stats.mean - a * cfg.dt).abs() / se, Comparator::Lt, band);
        b.info(format!("variance[{l}]"), stats.variance);
        b.check(
            format!("variance_rel_error[{l}]"),
            (stats.variance - target_var).abs() / target_var,
            Comparator::Lt,
            rel_tol,
        );
        variances.push(stats.variance);

        // The same rule on a single undivided step: variance dt²(α² + α).
        let coarse = alpha_integral_ensemble(alpha, cfg.dt, 1, cfg.n_samples.min(100_000), seed, IntegralMethod::Collapsed)?;
        b.info(format!("single_interval_variance[{l}]"), integral_statistics(&coarse)?.variance);
    }
    let max = variances.iter().cloned().fold(f64::MIN, f64::max);
    let min = variances.iter().cloned().fold(f64::MAX, f64::min);
    b.check("variance_ratio_max_over_min", max / min, Comparator::Lt, ratio_max);
    b.note(format!(
        "each sample sums the alpha rule over {} bridge sub-intervals of the step; with a single \
         sub-interval the variance is dt^2 (alpha^2 + alpha), reported as single_interval_variance",
        cfg.substeps
    ));
    Ok(b.finish())
}
