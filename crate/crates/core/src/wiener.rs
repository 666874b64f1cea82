//! Wiener paths, Brownian-bridge refinement and the α-point stochastic
//! integral `Σ_j W(t_j + αΔt) [W(t_{j+1}) − W(t_j)]`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sense::SenseParameter;
use crate::stream::{RngStreamSpec, StreamRng};

/// Points `W(t_j + αΔt)` inserted by [`refine_bridge`], one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgePoints {
    pub alpha: SenseParameter,
    /// `values[d][j]` for noise dimension `d` and step `j`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerPath {
    pub dt: f64,
    /// `values[d]` has `steps + 1` entries with `values[d][0] = 0`.
    pub values: Vec<Vec<f64>>,
    pub interior: Option<BridgePoints>,
}

impl WienerPath {
    pub fn steps(&self) -> usize {
        self.values[0].len() - 1
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn increment(&self, d: usize, j: usize) -> f64 {
        self.values[d][j + 1] - self.values[d][j]
    }
}

/// Draws `steps` i.i.d. `N(0, dt)` increments per dimension, step-major
/// (all dimensions of step 0, then step 1, ...).
pub fn sample_increments(
    steps: usize,
    dt: f64,
    dim: usize,
    stream: RngStreamSpec,
) -> Result<WienerPath> {
    if steps == 0 || dim == 0 || !(dt > 0.0) {
        return Err(Error::contract("need steps >= 1, dim >= 1 and dt > 0"));
    }
    let mut rng = stream.rng();
    let sd = dt.sqrt();
    let mut values = vec![vec![0.0; steps + 1]; dim];
    for j in 0..steps {
        for v in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            v[j + 1] = v[j] + sd * z;
        }
    }
    Ok(WienerPath {
        dt,
        values,
        interior: None,
    })
}

/// Inserts `W(t_j + αΔt)` into every step by sampling the Brownian bridge:
/// mean `(1−α)W(t_j) + αW(t_{j+1})`, variance `α(1−α)Δt`. The grid values
/// are left untouched. For `α ∈ {0, 1}` the inserted points are the
/// endpoints and no randomness is consumed.
pub fn refine_bridge(
    path: &WienerPath,
    alpha: SenseParameter,
    stream: RngStreamSpec,
) -> WienerPath {
    let a = alpha.value();
    let sd = (a * (1.0 - a) * path.dt).sqrt();
    let mut rng = stream.rng();
    let steps = path.steps();
    let mut interior = vec![vec![0.0; steps]; path.dim()];
    for j in 0..steps {
        for (d, row) in interior.iter_mut().enumerate() {
            let (w0, w1) = (path.values[d][j], path.values[d][j + 1]);
            let mean = (1.0 - a) * w0 + a * w1;
            row[j] = if sd > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            } else {
                mean
            };
        }
    }
    WienerPath {
        interior: Some(BridgePoints {
            alpha,
            values: interior,
        }),
        ..path.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaIntegralSample {
    pub alpha: SenseParameter,
    pub dt_total: f64,
    pub value: f64,
}

/// `Σ_j W(t_j + αΔt)·ΔW_j` along the first noise dimension. The path must
/// carry bridge points for the same α (endpoints suffice for α ∈ {0, 1}).
pub fn alpha_point_integral(path: &WienerPath, alpha: SenseParameter) -> Result<AlphaIntegralSample> {
    let a = alpha.value();
    let w = &path.values[0];
    let steps = path.steps();
    let value = match &path.interior {
        Some(b) if b.alpha == alpha => (0..steps)
            .map(|j| b.values[0][j] * (w[j + 1] - w[j]))
            .sum(),
        _ if a == 0.0 || a == 1.0 => (0..steps)
            .map(|j| {
                let eval = if a == 0.0 { w[j] } else { w[j + 1] };
                eval * (w[j + 1] - w[j])
            })
            .sum(),
        _ => {
            return Err(Error::contract(format!(
                "path is not refined for alpha = {alpha}"
            )))
        }
    };
    Ok(AlphaIntegralSample {
        alpha,
        dt_total: path.dt * steps as f64,
        value,
    })
}

/// Draws the `substeps`-point α-rule sum on `[0, dt_total]` exactly in law
/// from its sufficient statistics: with `S = Σ ΔW_j²` and `W = W(dt_total)`,
/// the sum equals `W²/2 + (α − ½)S + √(α(1−α)h)·R` where `R | S ~ N(0, S)`,
/// and `S − W²/K ~ h·χ²_{K−1}` independently of `W`.
pub fn sample_alpha_integral_collapsed(
    alpha: SenseParameter,
    dt_total: f64,
    substeps: usize,
    rng: &mut StreamRng,
) -> f64 {
    let a = alpha.value();
    let k = substeps.max(1);
    let h = dt_total / k as f64;
    let w = dt_total.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let s = if k == 1 {
        w * w
    } else {
        let chi = ChiSquared::new((k - 1) as f64).expect("k >= 2").sample(rng);
        w * w / k as f64 + h * chi
    };
    let r = s.sqrt() * rng.sample::<f64, _>(StandardNormal);
    0.5 * w * w + (a - 0.5) * s + (a * (1.0 - a) * h).sqrt() * r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralMethod {
    /// Sample every increment, refine by the bridge, sum explicitly.
    Explicit,
    /// Exact-in-law draw of the same sum from its sufficient statistics.
    Collapsed,
}

/// `n_samples` independent α-point integrals over `[0, dt_total]`, each on
/// `substeps` sub-intervals. Sample `i` uses stream `(master_seed, i)`.
pub fn alpha_integral_ensemble(
    alpha: SenseParameter,
    dt_total: f64,
    substeps: usize,
    n_samples: usize,
    master_seed: u64,
    method: IntegralMethod,
) -> Result<Vec<AlphaIntegralSample>> {
    if substeps == 0 || !(dt_total > 0.0) {
        return Err(Error::contract("need substeps >= 1 and dt_total > 0"));
    }
    let h = dt_total / substeps as f64;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let stream = RngStreamSpec::new(master_seed, i);
            let value = match method {
                IntegralMethod::Explicit => {
                    let path = sample_increments(substeps, h, 1, stream)?;
                    let refined = refine_bridge(&path, alpha, stream.substream(1));
                    alpha_point_integral(&refined, alpha)?.value
                }
                IntegralMethod::Collapsed => {
                    sample_alpha_integral_collapsed(alpha, dt_total, substeps, &mut stream.rng())
                }
            };
            Ok(AlphaIntegralSample {
                alpha,
                dt_total,
                value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralStatistics {
    pub mean: f64,
    /// Unbiased (n − 1 denominator).
    pub variance: f64,
    pub standard_error: f64,
    pub count: usize,
}

pub fn integral_statistics(samples: &[AlphaIntegralSample]) -> Result<IntegralStatistics> {
    if samples.len() < 2 {
        return Err(Error::contract("need at least two samples"));
    }
    let first = samples[0];
    if samples
        .iter()
        .any(|s| s.alpha != first.alpha || s.dt_total != first.dt_total)
    {
        return Err(Error::contract("samples mix different alpha or dt"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.value).sum::<f64>() / n;
    let variance = samples.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(IntegralStatistics {
        mean,
        variance,
        standard_error: (variance / n).sqrt(),
        count: samples.len(),
    })
}
