//! Run configuration shared by the command-line subcommands.
//!
//! Values are layered: built-in defaults, then the JSON config file, then
//! command-line flags. Every numeric field is checked by
//! [`RunConfig::validate`] before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::claims::ClaimsConfig;
use crate::error::{Error, Result};
use crate::fpe::Boundary;
use crate::integrator::ExitPolicy;
use crate::model::{ModelSpec, SdeModel};
use crate::sense::SenseParameter;

/// Coordinates beyond this magnitude are clipped when a default range is
/// derived from a model's domain.
const DEFAULT_EXTENT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartConfig {
    /// Nodes per axis of tabulated charts.
    pub grid: usize,
    /// Eigen-grid nodes per axis of numerical 2D charts.
    pub grid_2d: usize,
    /// Validation points (1D) or an approximate total spread over a tensor grid.
    pub validation_points: usize,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub reference: Option<Vec<f64>>,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig {
            grid: 513,
            grid_2d: 41,
            validation_points: 1000,
            lo: None,
            hi: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpeConfig {
    pub grid: usize,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Explicit step; rejected if above the stability bound.
    pub dt: Option<f64>,
    /// Step as a fraction of the stability bound when `dt` is unset.
    pub dt_fraction: f64,
    pub boundary: Boundary,
    /// Densities written after the initial one, evenly spaced in time.
    pub snapshots: usize,
    /// Mean of the initial Gaussian; defaults to `x0`.
    pub initial_mean: Option<f64>,
    pub initial_std: f64,
}

impl Default for FpeConfig {
    fn default() -> Self {
        FpeConfig {
            grid: 512,
            lo: None,
            hi: None,
            dt: None,
            dt_fraction: 0.9,
            boundary: Boundary::Reflecting,
            snapshots: 5,
            initial_mean: None,
            initial_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub alpha: f64,
    /// Initial state; defaults to 1 on positive domains and 0 otherwise,
    /// clamped into the domain.
    pub x0: Option<Vec<f64>>,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub record_stride: usize,
    pub exit_policy: ExitPolicy,
    /// Largest tolerated number of domain exits per path.
    pub max_exit_fraction: f64,
    pub chart: ChartConfig,
    pub fpe: FpeConfig,
    pub claims: ClaimsConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::named("geometric"),
            alpha: 0.5,
            x0: None,
            t_end: 1.0,
            dt: 1e-3,
            n_paths: 1000,
            seed: 7,
            record_stride: 10,
            exit_policy: ExitPolicy::Absorb,
            max_exit_fraction: 0.01,
            chart: ChartConfig::default(),
            fpe: FpeConfig::default(),
            claims: ClaimsConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn require(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn sense(&self) -> Result<SenseParameter> {
        SenseParameter::new(self.alpha)
    }

    pub fn build_model(&self) -> Result<SdeModel> {
        self.model.build(self.sense()?)
    }

    /// Checks every numeric field and that the model builds.
    pub fn validate(&self) -> Result<()> {
        self.sense()?;
        require(self.t_end.is_finite() && self.t_end > 0.0, "t_end", "T must be positive")?;
        require(self.dt.is_finite() && self.dt > 0.0, "dt", "dt must be positive")?;
        require(self.dt <= self.t_end, "dt", "dt must not exceed T")?;
        require(self.n_paths >= 1, "n_paths", "at least one path required")?;
        require(self.record_stride >= 1, "record_stride", "must be at least 1")?;
        require(
            (0.0..=1.0).contains(&self.max_exit_fraction),
            "max_exit_fraction",
            "must lie in [0,1]",
        )?;
        let c = &self.chart;
        require(c.grid >= 2, "chart.grid", "at least two nodes required")?;
        require(c.grid_2d >= 2, "chart.grid_2d", "at least two nodes required")?;
        require(c.validation_points >= 1, "chart.validation_points", "at least one point required")?;
        let f = &self.fpe;
        require(f.grid >= 3, "fpe.grid", "at least three nodes required")?;
        require(f.snapshots >= 1, "fpe.snapshots", "at least one snapshot required")?;
        require(f.initial_std.is_finite() && f.initial_std > 0.0, "fpe.initial_std", "must be positive")?;
        require(
            f.dt_fraction > 0.0 && f.dt_fraction <= 1.0,
            "fpe.dt_fraction",
            "must lie in (0,1]",
        )?;
        if let Some(dt) = f.dt {
            require(dt.is_finite() && dt > 0.0, "fpe.dt", "must be positive")?;
        }

        let model = self.build_model()?;
        let x0 = self.initial_state(&model);
        require(x0.len() == model.state_dim(), "x0", "length must match the state dimension")?;
        require(model.domain().contains(&x0), "x0", "initial state lies outside the model domain")?;
        let (lo, hi) = self.chart_range(&model);
        require(lo.len() == model.state_dim() && hi.len() == lo.len(), "chart.lo/hi", "length must match the state dimension")?;
        require(lo.iter().zip(&hi).all(|(a, b)| a < b), "chart.lo/hi", "lo must be below hi")?;
        if let (Some(a), Some(b)) = (f.lo, f.hi) {
            require(a < b, "fpe.lo/hi", "lo must be below hi")?;
        }
        Ok(())
    }

    pub fn initial_state(&self, model: &SdeModel) -> Vec<f64> {
        if let Some(x0) = &self.x0 {
            return x0.clone();
        }
        let d = model.domain();
        d.lo()
            .iter()
            .zip(d.hi())
            .map(|(&lo, &hi)| if lo > 0.0 { 1.0f64 } else { 0.0 }.clamp(lo, hi))
            .collect()
    }

    /// Box for chart construction: explicit bounds, `[0.1, 10]` for the
    /// geometric model, otherwise the model domain clipped to `±10`.
    pub fn chart_range(&self, model: &SdeModel) -> (Vec<f64>, Vec<f64>) {
        let d = model.domain();
        let lo = self.chart.lo.clone().unwrap_or_else(|| default_bounds(&self.model, d.lo(), d.hi()).0);
        let hi = self.chart.hi.clone().unwrap_or_else(|| default_bounds(&self.model, d.lo(), d.hi()).1);
        (lo, hi)
    }

    pub fn chart_reference(&self, lo: &[f64], hi: &[f64]) -> Vec<f64> {
        self.chart.reference.clone().unwrap_or_else(|| {
            lo.iter()
                .zip(hi)
                .map(|(&l, &h)| if l > 0.0 { 1.0f64 } else { 0.0 }.clamp(l, h))
                .collect()
        })
    }

    /// Interval of the density grid, defaulting to the chart range.
    pub fn fpe_range(&self, model: &SdeModel) -> (f64, f64) {
        let (lo, hi) = self.chart_range(model);
        (self.fpe.lo.unwrap_or(lo[0]), self.fpe.hi.unwrap_or(hi[0]))
    }
}

fn default_bounds(spec: &ModelSpec, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    if let ModelSpec::Registry { name, .. } = spec {
        if name == "geometric" {
            let a = spec.param("x_min").unwrap_or(0.1).max(0.1);
            let b = spec.param("x_max").unwrap_or(10.0).min(10.0);
            return (vec![a], vec![b]);
        }
    }
    (
        lo.iter().map(|&v| v.max(-DEFAULT_EXTENT)).collect(),
        hi.iter().map(|&v| v.min(DEFAULT_EXTENT)).collect(),
    )
}
