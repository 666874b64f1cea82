//! Scripted experiments, one per checkable assertion, each producing a
//! [`ClaimReport`] whose verdict is a pure function of its measurements.
//!
//! Every threshold comes from [`ClaimsConfig`] and is copied into the report.

mod algebra;
mod integral;
mod selection;

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};

pub use algebra::{
    claim_drift_projection, claim_spurious_identity, claim_transformed_asp_zero, identity_families,
    FamilyKind, NoiseFamily,
};
pub use integral::claim_alpha_integral_moments;
pub use selection::{claim_fpe_alpha_independence, claim_sense_selection, sense_selection_run, SelectionRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimId {
    SenseSelection,
    FpeAlphaIndependence,
    SpuriousIdentity,
    AlphaIntegralMoments,
    TransformedAspZero,
    DriftProjection,
}

impl ClaimId {
    pub const ALL: [ClaimId; 6] = [
        ClaimId::SenseSelection,
        ClaimId::FpeAlphaIndependence,
        ClaimId::SpuriousIdentity,
        ClaimId::AlphaIntegralMoments,
        ClaimId::TransformedAspZero,
        ClaimId::DriftProjection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimId::SenseSelection => "sense_selection",
            ClaimId::FpeAlphaIndependence => "fpe_alpha_independence",
            ClaimId::SpuriousIdentity => "spurious_identity",
            ClaimId::AlphaIntegralMoments => "alpha_integral_moments",
            ClaimId::TransformedAspZero => "transformed_asp_zero",
            ClaimId::DriftProjection => "drift_projection",
        }
    }
}

impl fmt::Display for ClaimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClaimId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClaimId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = ClaimId::ALL.iter().map(|c| c.as_str()).collect();
                Error::config("claim", format!("unknown claim `{s}`; known: {}", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    /// Reported, not asserted.
    #[serde(rename = "info")]
    Info,
}

impl Comparator {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Eq => value == threshold,
            Comparator::Info => true,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Info => "info",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    pub comparator: Comparator,
    pub threshold: Option<f64>,
    /// `None` for informational values.
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    FlaggedAmbiguous,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::FlaggedAmbiguous => "flagged-ambiguous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub claim_id: ClaimId,
    pub params: Value,
    pub measurements: Vec<Measurement>,
    pub thresholds: Vec<Threshold>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Wall-clock seconds; left out of the JSON so reports stay byte-stable.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ClaimReport {
    pub fn measurement(&self, name: &str) -> Option<&Measurement> {
        self.measurements.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.measurement(name).map(|m| m.value)
    }

    /// Asserted measurements that did not hold.
    pub fn failures(&self) -> Vec<&Measurement> {
        self.measurements
            .iter()
            .filter(|m| m.passed == Some(false))
            .collect()
    }
}

/// Collects measurements and thresholds for one claim.
#[derive(Debug)]
pub(crate) struct ReportBuilder {
    id: ClaimId,
    params: Value,
    measurements: Vec<Measurement>,
    thresholds: Vec<Threshold>,
    notes: Vec<String>,
    flagged: bool,
    started: Instant,
}

impl ReportBuilder {
    pub(crate) fn new(id: ClaimId, params: Value) -> Self {
        ReportBuilder {
            id,
            params,
            measurements: Vec::new(),
            thresholds: Vec::new(),
            notes: Vec::new(),
            flagged: false,
            started: Instant::now(),
        }
    }

    pub(crate) fn threshold(&mut self, name: &str, value: f64) -> f64 {
        if !self.thresholds.iter().any(|t| t.name == name) {
            self.thresholds.push(Threshold {
                name: name.to_string(),
                value,
            });
        }
        value
    }

    pub(crate) fn check(&mut self, name: impl Into<String>, value: f64, comparator: Comparator, threshold: f64) -> bool {
        let passed = comparator.holds(value, threshold);
        self.measurements.push(Measurement {
            name: name.into(),
            value,
            comparator,
            threshold: Some(threshold),
            passed: Some(passed),
        });
        passed
    }

    pub(crate) fn info(&mut self, name: impl Into<String>, value: f64) {
        self.measurements.push(Measurement {
            name: name.into(),
            value,
            comparator: Comparator::Info,
            threshold: None,
            passed: None,
        });
    }

    pub(crate) fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub(crate) fn flag_ambiguous(&mut self) {
        self.flagged = true;
    }

    pub(crate) fn finish(self) -> ClaimReport {
        let failed = self.measurements.iter().any(|m| m.passed == Some(false));
        let verdict = if self.flagged {
            Verdict::FlaggedAmbiguous
        } else if failed {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        ClaimReport {
            claim_id: self.id,
            params: self.params,
            measurements: self.measurements,
            thresholds: self.thresholds,
            verdict,
            notes: self.notes,
            runtime_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Parameters and thresholds of the sense-selection experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SenseSelectionConfig {
    pub sigma: f64,
    pub x0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub alphas: Vec<f64>,
    /// Total runs including the main one, each with its own derived seed.
    pub replications: usize,
    /// Fully recorded paths used for the pathwise comparison.
    pub pathwise_paths: usize,
    /// Paths per sense for the constant-diffusion controls.
    pub neutral_paths: usize,
    pub ks_max: f64,
    pub separation_factor: f64,
    pub pathwise_factor: f64,
    pub neutral_ks_max: f64,
}

impl Default for SenseSelectionConfig {
    fn default() -> Self {
        SenseSelectionConfig {
            sigma: 0.5,
            x0: 1.0,
            t_end: 1.0,
            dt: 1e-3,
            n_paths: 100_000,
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            replications: 10,
            pathwise_paths: 1000,
            neutral_paths: 20_000,
            ks_max: 0.01,
            separation_factor: 5.0,
            pathwise_factor: 10.0,
            neutral_ks_max: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpeClaimConfig {
    pub sigma: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub grid: usize,
    pub t_end: f64,
    /// Variance of the initial Gaussian in z (mean 0, i.e. centred at x = 1).
    pub z0_variance: f64,
    /// Time step as a fraction of the stability bound.
    pub dt_fraction: f64,
    pub alphas: Vec<f64>,
    pub l1_match: f64,
    pub l1_separation: f64,
    /// Also run on the refined grid and require a smaller L1 at α = ½.
    pub refine: bool,
}

impl Default for FpeClaimConfig {
    fn default() -> Self {
        FpeClaimConfig {
            sigma: 0.5,
            x_lo: 0.05,
            x_hi: 8.0,
            grid: 512,
            t_end: 0.5,
            z0_variance: 0.1,
            dt_fraction: 0.9,
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            l1_match: 1e-2,
            l1_separation: 5e-2,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousIdentityConfig {
    pub points: usize,
    pub tolerance_analytic: f64,
    pub tolerance_fd: f64,
}

impl Default for SpuriousIdentityConfig {
    fn default() -> Self {
        SpuriousIdentityConfig {
            points: 100,
            tolerance_analytic: 1e-6,
            tolerance_fd: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaIntegralConfig {
    pub dt: f64,
    pub n_samples: usize,
    /// Bridge sub-intervals per sample; the variance approaches `dt²/2`
    /// as this grows.
    pub substeps: usize,
    pub alphas: Vec<f64>,
    pub mean_se_band: f64,
    pub variance_rel_tol: f64,
    pub variance_ratio_max: f64,
}

impl Default for AlphaIntegralConfig {
    fn default() -> Self {
        AlphaIntegralConfig {
            dt: 0.01,
            n_samples: 1_000_000,
            substeps: 1 << 20,
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            mean_se_band: 4.0,
            variance_rel_tol: 0.02,
            variance_ratio_max: 1.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformedAspConfig {
    pub sigma: f64,
    pub geometric_range: [f64; 2],
    pub asinh_range: [f64; 2],
    pub diagonal_range: [f64; 2],
    pub chart_grid: usize,
    pub points: usize,
    /// Per-axis validation points for the 2D chart.
    pub points_2d: usize,
    pub tolerance_1d: f64,
    pub tolerance_2d: f64,
    pub round_trip_tolerance: f64,
    pub diffusion_tolerance: f64,
}

impl Default for TransformedAspConfig {
    fn default() -> Self {
        TransformedAspConfig {
            sigma: 0.5,
            geometric_range: [0.1, 10.0],
            asinh_range: [-10.0, 10.0],
            diagonal_range: [0.1, 10.0],
            chart_grid: 513,
            points: 1000,
            points_2d: 20,
            tolerance_1d: 1e-8,
            tolerance_2d: 1e-6,
            round_trip_tolerance: 1e-8,
            diffusion_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftProjectionConfig {
    pub sigma: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub points: Vec<f64>,
    pub closed_form_tolerance: f64,
}

impl Default for DriftProjectionConfig {
    fn default() -> Self {
        DriftProjectionConfig {
            sigma: 0.5,
            betas: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            alphas: vec![0.0, 0.5, 1.0],
            points: vec![0.5, 1.0, 2.0],
            closed_form_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaimsConfig {
    pub master_seed: u64,
    pub enabled: Vec<ClaimId>,
    pub sense_selection: SenseSelectionConfig,
    pub fpe_alpha_independence: FpeClaimConfig,
    pub spurious_identity: SpuriousIdentityConfig,
    pub alpha_integral_moments: AlphaIntegralConfig,
    pub transformed_asp_zero: TransformedAspConfig,
    pub drift_projection: DriftProjectionConfig,
}

impl Default for ClaimsConfig {
    fn default() -> Self {
        ClaimsConfig {
            master_seed: 7,
            enabled: ClaimId::ALL.to_vec(),
            sense_selection: Default::default(),
            fpe_alpha_independence: Default::default(),
            spurious_identity: Default::default(),
            alpha_integral_moments: Default::default(),
            transformed_asp_zero: Default::default(),
            drift_projection: Default::default(),
        }
    }
}

/// Runs one claim; an internal error becomes a failing report.
pub fn run_claim(id: ClaimId, config: &ClaimsConfig) -> ClaimReport {
    let seed = config.master_seed;
    let result = match id {
        ClaimId::SenseSelection => claim_sense_selection(&config.sense_selection, seed),
        ClaimId::FpeAlphaIndependence => claim_fpe_alpha_independence(&config.fpe_alpha_independence),
        ClaimId::SpuriousIdentity => claim_spurious_identity(&config.spurious_identity, seed),
        ClaimId::AlphaIntegralMoments => claim_alpha_integral_moments(&config.alpha_integral_moments, seed),
        ClaimId::TransformedAspZero => claim_transformed_asp_zero(&config.transformed_asp_zero),
        ClaimId::DriftProjection => claim_drift_projection(&config.drift_projection),
    };
    result.unwrap_or_else(|e| {
        let mut b = ReportBuilder::new(id, serde_json::json!({ "master_seed": seed }));
        b.note(format!("experiment aborted: {e}"));
        b.check("completed", 0.0, Comparator::Eq, 1.0);
        b.finish()
    })
}

/// Every enabled claim in canonical order. Failures never abort the batch.
pub fn run_all(config: &ClaimsConfig) -> Vec<ClaimReport> {
    ClaimId::ALL
        .into_iter()
        .filter(|id| config.enabled.contains(id))
        .map(|id| run_claim(id, config))
        .collect()
}

/// True iff no report has the verdict `fail`.
pub fn all_passed(reports: &[ClaimReport]) -> bool {
    reports.iter().all(|r| r.verdict != Verdict::Fail)
}

/// Markdown table of verdicts and failing measurements.
pub fn summary_markdown(reports: &[ClaimReport]) -> String {
    let mut s = String::from("| claim | verdict | asserted | failed |\n|---|---|---|---|\n");
    for r in reports {
        let asserted = r.measurements.iter().filter(|m| m.passed.is_some()).count();
        let failed: Vec<String> = r
            .failures()
            .iter()
            .map(|m| {
                format!(
                    "`{}` = {:.4e} (needs {} {})",
                    m.name,
                    m.value,
                    m.comparator.symbol(),
                    m.threshold.map(|t| format!("{t:e}")).unwrap_or_default()
                )
            })
            .collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            r.claim_id,
            r.verdict,
            asserted,
            if failed.is_empty() { "-".to_string() } else { failed.join("<br>") }
        );
    }
    for r in reports.iter().filter(|r| !r.notes.is_empty()) {
        let _ = writeln!(s, "\n### {}\n", r.claim_id);
        for n in &r.notes {
            let _ = writeln!(s, "{n}\n");
        }
    }
    s
}

/// Writes `<claim_id>.json` per report, `reports.json` and `summary.md`.
pub fn write_reports(dir: &Path, reports: &[ClaimReport]) -> Result<()> {
    for r in reports {
        write_json(&dir.join(format!("{}.json", r.claim_id)), r)?;
    }
    write_json(&dir.join("reports.json"), &reports)?;
    write_atomic(&dir.join("summary.md"), summary_markdown(reports).as_bytes())
}

pub(crate) fn sense(alpha: f64) -> Result<crate::SenseParameter> {
    crate::SenseParameter::new(alpha)
}

/// Label used in measurement names, e.g. `0.25` → `"0.25"`.
pub(crate) fn label(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_is_a_function_of_measurements() {
        let mut b = ReportBuilder::new(ClaimId::SpuriousIdentity, Value::Null);
        b.check("a", 1.0, Comparator::Lt, 2.0);
        b.info("b", 5.0);
        assert_eq!(b.finish().verdict, Verdict::Pass);
        let mut b = ReportBuilder::new(ClaimId::SpuriousIdentity, Value::Null);
        b.check("a", 3.0, Comparator::Lt, 2.0);
        assert_eq!(b.finish().verdict, Verdict::Fail);
        let mut b = ReportBuilder::new(ClaimId::DriftProjection, Value::Null);
        b.check("a", 1.0, Comparator::Lt, 2.0);
        b.flag_ambiguous();
        assert_eq!(b.finish().verdict, Verdict::FlaggedAmbiguous);
    }

    #[test]
    fn claim_ids_parse() {
        for id in ClaimId::ALL {
            assert_eq!(id.as_str().parse::<ClaimId>().unwrap(), id);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{id}\""));
        }
        assert!("nope".parse::<ClaimId>().is_err());
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let c = ClaimsConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ClaimsConfig>(&s).unwrap(), c);
        let partial: ClaimsConfig = serde_json::from_str(r#"{"master_seed": 3, "sense_selection": {"n_paths": 10}}"#).unwrap();
        assert_eq!(partial.master_seed, 3);
        assert_eq!(partial.sense_selection.n_paths, 10);
        assert_eq!(partial.sense_selection.dt, 1e-3);
    }

    #[test]
    fn disabled_claims_are_skipped() {
        let c = ClaimsConfig {
            enabled: vec![ClaimId::DriftProjection],
            ..Default::default()
        };
        let r = run_all(&c);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].verdict, Verdict::FlaggedAmbiguous);
    }
}
