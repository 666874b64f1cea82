//! α-sense Euler stepping and ensemble simulation.
//!
//! A step uses the Itô-equivalent increment
//! `x' = x + [a(x) + α a_sp(x)] dt + B(x) dW`, with everything evaluated at
//! the left point. Paths draw their increments from their own stream, so an
//! ensemble is a pure function of its inputs and the master seed.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::CoordinateChart;
use crate::diffusion::spurious_drift_kernel;
use crate::error::{Error, Result};
use crate::io::{fmt_exact, write_atomic, write_json};
use crate::model::{SdeModel, LANES};
use crate::sense::SenseParameter;
use crate::stream::RngStreamSpec;

/// What happens when a step leaves the model's domain box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitPolicy {
    /// Freeze the path at its last in-domain state.
    #[default]
    Absorb,
    /// Mirror the offending coordinate back across the boundary.
    Reflect,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Keep every `record_stride`-th state (must divide the step count).
    pub record_stride: usize,
    pub exit_policy: ExitPolicy,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            record_stride: 1,
            exit_policy: ExitPolicy::Absorb,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    /// Steps whose result left the domain.
    pub rejected_steps: u64,
    /// Paths frozen by the absorbing policy.
    pub absorbed_paths: u64,
    /// A reflected point still fell outside and was clamped to the box.
    pub clamped: bool,
}

impl StepReport {
    fn merge(&mut self, other: &StepReport) {
        self.rejected_steps += other.rejected_steps;
        self.absorbed_paths += other.absorbed_paths;
        self.clamped |= other.clamped;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub model_name: String,
    pub alpha_used: SenseParameter,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub master_seed: u64,
    /// Recorded times (uniform, stride · dt apart).
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub dim: usize,
    /// `states[(p * times.len() + k) * dim + i]`.
    pub states: Vec<f64>,
    pub streams: Vec<RngStreamSpec>,
    pub report: StepReport,
}

impl PathEnsemble {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        let o = (path * self.times.len() + time_index) * self.dim;
        &self.states[o..o + self.dim]
    }

    /// Coordinate `i` of every path at one recorded time.
    pub fn marginal(&self, time_index: usize, i: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, time_index)[i]).collect()
    }

    pub fn final_marginal(&self, i: usize) -> Vec<f64> {
        self.marginal(self.times.len() - 1, i)
    }

    pub fn metadata(&self) -> EnsembleMetadata {
        EnsembleMetadata {
            model: self.model_name.clone(),
            alpha: self.alpha_used.value(),
            seed: self.master_seed,
            dt: self.dt,
            t_end: self.t_end,
            n_paths: self.n_paths,
            record_stride: if self.times.len() > 1 {
                ((self.times[1] - self.times[0]) / self.dt).round() as usize
            } else {
                1
            },
            domain_exits: self.report.rejected_steps,
            absorbed_paths: self.report.absorbed_paths,
            clamped: self.report.clamped,
        }
    }

    /// CSV with header `path_id,t,x1..xn`, values at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,t");
        for i in 0..self.dim {
            let _ = write!(s, ",x{}", i + 1);
        }
        s.push('\n');
        for p in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                let _ = write!(s, "{p},{}", fmt_exact(*t));
                for v in self.state(p, k) {
                    s.push(',');
                    s.push_str(&fmt_exact(*v));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        write_json(&dir.join(format!("{stem}.json")), &self.metadata())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub model: String,
    pub alpha: f64,
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub record_stride: usize,
    pub domain_exits: u64,
    pub absorbed_paths: u64,
    pub clamped: bool,
}

/// Scratch buffers for allocation-free stepping.
struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
    g: Vec<f64>,
    sp: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, n: usize, m: usize) {
        self.a.resize(n, 0.0);
        self.b.resize(n * m, 0.0);
        self.g.resize(n * m * n, 0.0);
        self.sp.resize(n, 0.0);
        self.next.resize(n, 0.0);
    }

    fn new(n: usize, m: usize) -> Self {
        Workspace {
            a: vec![0.0; n],
            b: vec![0.0; n * m],
            g: vec![0.0; n * m * n],
            sp: vec![0.0; n],
            next: vec![0.0; n],
        }
    }
}

/// Writes the candidate next state into `ws.next` (no domain check).
#[inline]
fn propose(model: &SdeModel, alpha: f64, x: &[f64], dw: &[f64], dt: f64, ws: &mut Workspace) {
    let n = model.state_dim();
    let m = model.noise_dim();
    if n == 1 && m == 1 {
        // scalar fast path, same arithmetic as the general loop below
        let (mut a, mut b) = ([0.0], [0.0]);
        model.drift().eval_unchecked(x, &mut a);
        model.noise().eval_unchecked(x, &mut b);
        let mut v = x[0] + a[0] * dt;
        if alpha != 0.0 {
            let mut g = [0.0];
            model.noise().gradient_unchecked(x, &mut g);
            v += alpha * (g[0] * b[0]) * dt;
        }
        ws.next[0] = v + b[0] * dw[0];
        return;
    }
    model.drift().eval_unchecked(x, &mut ws.a);
    model.noise().eval_unchecked(x, &mut ws.b);
    if alpha != 0.0 {
        model.noise().gradient_unchecked(x, &mut ws.g);
        spurious_drift_kernel(&ws.b, &ws.g, n, m, &mut ws.sp);
    }
    for i in 0..n {
        let mut v = x[i] + ws.a[i] * dt;
        if alpha != 0.0 {
            v += alpha * ws.sp[i] * dt;
        }
        for k in 0..m {
            v += ws.b[i * m + k] * dw[k];
        }
        ws.next[i] = v;
    }
}

#[inline]
fn inside(x: &[f64], lo: &[f64], hi: &[f64]) -> bool {
    if x.len() == 1 {
        return x[0] >= lo[0] && x[0] <= hi[0];
    }
    x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
}

/// One α-sense step. A result outside the domain comes back as
/// [`Error::Domain`] carrying the offending point; the caller picks the policy.
pub fn alpha_euler_step(model: &SdeModel, x: &[f64], dw: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::contract("dt must be positive"));
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::contract("dW length must equal the noise dimension"));
    }
    model.domain().check(x)?;
    let mut ws = Workspace::new(model.state_dim(), model.noise_dim());
    propose(model, model.sense().value(), x, dw, dt, &mut ws);
    model.domain().check(&ws.next)?;
    Ok(ws.next)
}

/// Recorded states and step report of one path, per coupled member.
type PathOutput = (Vec<Vec<f64>>, Vec<StepReport>);

/// Fixed inputs for stepping one path of one coupled member.
struct PathSetup<'a> {
    model: &'a SdeModel,
    alpha: f64,
    x0: &'a [f64],
    lo: &'a [f64],
    hi: &'a [f64],
}

/// Settings shared by every member of a coupled run.
struct RunSetup {
    dt: f64,
    stride: usize,
    policy: ExitPolicy,
}

impl RunSetup {
    fn run(&self, mem: &PathSetup, dws: &[f64], ws: &mut Workspace, rec: &mut Vec<f64>, report: &mut StepReport) -> Result<()> {
        let (n, m) = (mem.model.state_dim(), mem.model.noise_dim());
        let mut x = mem.x0.to_vec();
        rec.extend_from_slice(&x);
        let mut alive = true;
        for (j, dw) in dws.chunks_exact(m).enumerate() {
            if alive {
                propose(mem.model, mem.alpha, &x, dw, self.dt, ws);
                if inside(&ws.next, mem.lo, mem.hi) {
                    x.copy_from_slice(&ws.next);
                } else {
                    report.rejected_steps += 1;
                    match self.policy {
                        ExitPolicy::Abort => {
                            return Err(Error::Domain {
                                point: ws.next.clone(),
                            })
                        }
                        ExitPolicy::Absorb => {
                            alive = false;
                            report.absorbed_paths += 1;
                        }
                        ExitPolicy::Reflect => {
                            for i in 0..n {
                                x[i] = reflect(ws.next[i], mem.lo[i], mem.hi[i], &mut report.clamped);
                            }
                        }
                    }
                }
            }
            if (j + 1) % self.stride == 0 {
                rec.extend_from_slice(&x);
            }
        }
        Ok(())
    }

    /// `run` for scalar members over a block of paths stepped in lockstep.
    /// `dws` is step-major with `LANES` entries per step, of which the first
    /// `lanes` are real paths. Same arithmetic, same results as stepping
    /// each path alone.
    fn run_scalar(&self, members: &[PathSetup], dws: &[f64], lanes: usize, n_rec: usize) -> Result<Vec<PathOutput>> {
        let dt = self.dt;
        let mut out: Vec<PathOutput> = (0..lanes)
            .map(|_| (Vec::with_capacity(members.len()), Vec::with_capacity(members.len())))
            .collect();
        let (mut xs, mut v, mut abg) = ([0.0; LANES], [0.0; LANES], [[0.0; 3]; LANES]);
        let mut rec = vec![0.0; n_rec * lanes];
        for mem in members {
            let (alpha, lo, hi) = (mem.alpha, mem.lo[0], mem.hi[0]);
            let kernel = mem.model.kernel();
            xs.fill(mem.x0[0]);
            let mut alive = [true; LANES];
            let mut all_alive = true;
            let mut reports = vec![StepReport::default(); lanes];
            rec[..lanes].copy_from_slice(&xs[..lanes]);
            let (mut k_rec, mut until_record) = (1, self.stride);
            for dw in dws.chunks_exact(LANES) {
                match kernel {
                    Some(k) => k.eval_batch(&xs, &mut abg),
                    None => {
                        for l in 0..lanes {
                            let (mut a, mut b, mut g) = ([0.0], [0.0], [0.0]);
                            mem.model.drift().eval_unchecked(&xs[l..=l], &mut a);
                            mem.model.noise().eval_unchecked(&xs[l..=l], &mut b);
                            if alpha != 0.0 {
                                mem.model.noise().gradient_unchecked(&xs[l..=l], &mut g);
                            }
                            abg[l] = [a[0], b[0], g[0]];
                        }
                    }
                }
                let mut inside = true;
                for l in 0..LANES {
                    let [a, b, g] = abg[l];
                    let mut y = xs[l] + a * dt;
                    if alpha != 0.0 {
                        y += alpha * (g * b) * dt;
                    }
                    y += b * dw[l];
                    v[l] = y;
                    inside &= (l >= lanes) | ((y >= lo) & (y <= hi));
                }
                if inside && all_alive {
                    xs = v;
                } else {
                    for l in 0..lanes {
                        let y = v[l];
                        if !alive[l] {
                            continue;
                        }
                        if y >= lo && y <= hi {
                            xs[l] = y;
                            continue;
                        }
                        reports[l].rejected_steps += 1;
                        match self.policy {
                            ExitPolicy::Abort => return Err(Error::Domain { point: vec![y] }),
                            ExitPolicy::Absorb => {
                                alive[l] = false;
                                all_alive = false;
                                reports[l].absorbed_paths += 1;
                            }
                            ExitPolicy::Reflect => xs[l] = reflect(y, lo, hi, &mut reports[l].clamped),
                        }
                    }
                }
                until_record -= 1;
                if until_record == 0 {
                    until_record = self.stride;
                    rec[k_rec * lanes..(k_rec + 1) * lanes].copy_from_slice(&xs[..lanes]);
                    k_rec += 1;
                }
            }
            for (l, (paths, reps)) in out.iter_mut().enumerate() {
                paths.push((0..n_rec).map(|k| rec[k * lanes + l]).collect());
                reps.push(reports[l]);
            }
        }
        Ok(out)
    }
}

/// Mirrors `v` back into `[lo, hi]`, clamping if it is still outside.
#[inline]
fn reflect(v: f64, lo: f64, hi: f64, clamped: &mut bool) -> f64 {
    let mut v = v;
    if v > hi {
        v = 2.0 * hi - v;
    } else if v < lo {
        v = 2.0 * lo - v;
    }
    if v < lo || v > hi {
        *clamped = true;
        v = v.clamp(lo, hi);
    }
    v
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::config("dt", "T and dt must be positive"));
    }
    let k = (t_end / dt).round();
    if k < 1.0 || (k * dt - t_end).abs() > 1e-9 * t_end {
        return Err(Error::config("dt", "dt must divide T (no partial last step)"));
    }
    Ok(k as usize)
}

/// Simulates `n_paths` paths of `model` (at its own sense).
pub fn simulate_ensemble(
    model: &SdeModel,
    x0: &[f64],
    t_end: f64,
    dt: f64,
    n_paths: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<PathEnsemble> {
    let mut out = simulate_ensemble_senses(
        model,
        &[model.sense()],
        x0,
        t_end,
        dt,
        n_paths,
        master_seed,
        opts,
    )?;
    Ok(out.remove(0))
}

/// Simulates one ensemble per sense, all driven by the same Wiener
/// increments. Each output is identical to a separate
/// [`simulate_ensemble`] call at that sense with the same seed.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble_senses(
    model: &SdeModel,
    senses: &[SenseParameter],
    x0: &[f64],
    t_end: f64,
    dt: f64,
    n_paths: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<Vec<PathEnsemble>> {
    let members: Vec<CoupledMember> = senses
        .iter()
        .map(|&sense| CoupledMember { model, sense, x0 })
        .collect();
    simulate_coupled(&members, t_end, dt, n_paths, master_seed, opts)
}

/// One (model, sense, initial state) in a coupled run.
#[derive(Debug, Clone, Copy)]
pub struct CoupledMember<'a> {
    pub model: &'a SdeModel,
    pub sense: SenseParameter,
    pub x0: &'a [f64],
}

/// Simulates every member on the same Wiener increments: path `p` of each
/// output is driven by stream `(master_seed, p)`. All members need the same
/// noise dimension. Each output is identical to a separate
/// [`simulate_ensemble`] call for that member.
pub fn simulate_coupled(
    members: &[CoupledMember],
    t_end: f64,
    dt: f64,
    n_paths: usize,
    master_seed: u64,
    opts: &EnsembleOptions,
) -> Result<Vec<PathEnsemble>> {
    let steps = step_count(t_end, dt)?;
    if n_paths == 0 {
        return Err(Error::config("n_paths", "need at least one path"));
    }
    if opts.record_stride == 0 || steps % opts.record_stride != 0 {
        return Err(Error::config("record_stride", "stride must divide the step count"));
    }
    let Some(first) = members.first() else {
        return Ok(Vec::new());
    };
    let m = first.model.noise_dim();
    for mem in members {
        if mem.model.noise_dim() != m {
            return Err(Error::contract("coupled members must share the noise dimension"));
        }
        if mem.x0.len() != mem.model.state_dim() {
            return Err(Error::config("x0", format!("expected {} coordinates", mem.model.state_dim())));
        }
        mem.model
            .domain()
            .check(mem.x0)
            .map_err(|_| Error::config("x0", "initial condition outside the model domain"))?;
    }

    let stride = opts.record_stride;
    let n_rec = steps / stride + 1;
    let sd = dt.sqrt();
    let scalar = members.iter().all(|mem| mem.model.state_dim() == 1) && m == 1;
    let n_max = members.iter().map(|mem| mem.model.state_dim()).max().unwrap_or(1);
    let setups: Vec<PathSetup> = members
        .iter()
        .map(|mem| PathSetup {
            model: mem.model,
            alpha: mem.sense.value(),
            x0: mem.x0,
            lo: mem.model.domain().lo(),
            hi: mem.model.domain().hi(),
        })
        .collect();
    let run = RunSetup {
        dt,
        stride,
        policy: opts.exit_policy,
    };
    let per_path: Vec<PathOutput> = if scalar {
        let blocks: Vec<Result<Vec<PathOutput>>> = (0..n_paths.div_ceil(LANES))
            .into_par_iter()
            .map_init(
                || vec![0.0; steps * LANES],
                |dws, blk| {
                    let first = blk * LANES;
                    let lanes = LANES.min(n_paths - first);
                    // padding lanes step on zero increments and are dropped
                    dws.fill(0.0);
                    for l in 0..lanes {
                        let mut rng = RngStreamSpec::new(master_seed, (first + l) as u64).rng();
                        for j in 0..steps {
                            dws[j * LANES + l] = sd * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    run.run_scalar(&setups, dws, lanes, n_rec)
                },
            )
            .collect();
        let mut v = Vec::with_capacity(n_paths);
        for b in blocks {
            v.extend(b?);
        }
        v
    } else {
        (0..n_paths as u64)
            .into_par_iter()
            .map_init(
                || (vec![0.0; steps * m], Workspace::new(n_max, m)),
                |(dws, ws), p| {
                    // draw order is step-major, noise component minor
                    let mut rng = RngStreamSpec::new(master_seed, p).rng();
                    for w in dws.iter_mut() {
                        *w = sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    let mut rec = Vec::with_capacity(setups.len());
                    let mut reports = Vec::with_capacity(setups.len());
                    for mem in &setups {
                        let n = mem.model.state_dim();
                        ws.resize(n, m);
                        let mut r = Vec::with_capacity(n_rec * n);
                        let mut report = StepReport::default();
                        run.run(mem, dws, ws, &mut r, &mut report)?;
                        rec.push(r);
                        reports.push(report);
                    }
                    Ok((rec, reports))
                },
            )
            .collect::<Result<Vec<_>>>()?
    };

    let times: Vec<f64> = (0..n_rec).map(|k| (k * stride) as f64 * dt).collect();
    let mut out: Vec<PathEnsemble> = members
        .iter()
        .map(|mem| PathEnsemble {
            model_name: mem.model.name().to_string(),
            alpha_used: mem.sense,
            x0: mem.x0.to_vec(),
            dt,
            t_end,
            master_seed,
            times: times.clone(),
            n_paths,
            dim: mem.model.state_dim(),
            states: Vec::with_capacity(n_paths * n_rec * mem.model.state_dim()),
            streams: (0..n_paths as u64)
                .map(|p| RngStreamSpec::new(master_seed, p))
                .collect(),
            report: StepReport::default(),
        })
        .collect();
    for (rec, reports) in per_path {
        for (s, e) in out.iter_mut().enumerate() {
            e.states.extend_from_slice(&rec[s]);
            e.report.merge(&reports[s]);
        }
    }
    Ok(out)
}

/// Applies the chart inverse `x(z)` to every recorded state.
pub fn pushforward_paths(chart: &CoordinateChart, z: &PathEnsemble) -> Result<PathEnsemble> {
    if chart.dim() != z.dim {
        return Err(Error::contract("chart and ensemble dimensions differ"));
    }
    let per = z.times.len() * z.dim;
    let mapped: Vec<Result<Vec<f64>>> = (0..z.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut out = Vec::with_capacity(per);
            for k in 0..z.times.len() {
                let x = chart.inverse(z.state(p, k)).map_err(|e| match e {
                    Error::ChartRange { value, .. } => Error::ChartRange {
                        value,
                        path: Some(p),
                    },
                    other => other,
                })?;
                out.extend_from_slice(&x);
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(z.states.len());
    for r in mapped {
        states.extend_from_slice(&r?);
    }
    let x0 = chart.inverse(&z.x0)?;
    Ok(PathEnsemble {
        model_name: format!("{}-pushforward", z.model_name),
        x0,
        states,
        ..z.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DomainBox, MatrixField, VectorField};
    use crate::model::{constant_noise, geometric};
    use nalgebra::DMatrix;

    fn geo(alpha: SenseParameter) -> SdeModel {
        geometric(0.5, 0.0, 1e-8, 1e8, alpha).unwrap()
    }

    #[test]
    fn zero_model_does_not_move() {
        let dom = DomainBox::unbounded(2);
        let m = SdeModel::new(
            "zero",
            VectorField::zero(dom.clone()),
            MatrixField::constant(dom, DMatrix::zeros(2, 2)),
            SenseParameter::HANGGI,
        )
        .unwrap();
        let x = alpha_euler_step(&m, &[1.0, -2.0], &[0.3, 0.4], 0.1).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn pure_spurious_drift_step() {
        let (x, dt) = (2.0, 0.01);
        let y = alpha_euler_step(&geo(SenseParameter::STRATONOVICH), &[x], &[0.0], dt).unwrap();
        assert!((y[0] - (x + 0.5 * 0.25 * x * dt)).abs() < 1e-15);
    }

    #[test]
    fn sense_difference_is_spurious_drift() {
        let (x, dw, dt) = (1.7, 0.05, 0.01);
        let one = alpha_euler_step(&geo(SenseParameter::HANGGI), &[x], &[dw], dt).unwrap();
        let zero = alpha_euler_step(&geo(SenseParameter::ITO), &[x], &[dw], dt).unwrap();
        assert!(((one[0] - zero[0]) - 0.25 * x * dt).abs() < 1e-15);
    }

    #[test]
    fn step_leaving_domain_is_signalled() {
        let m = geometric(0.5, 0.0, 0.5, 2.0, SenseParameter::ITO).unwrap();
        assert!(matches!(
            alpha_euler_step(&m, &[1.9], &[1.0], 0.01),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn zero_noise_paths_stay_put() {
        let m = constant_noise(0.0, 10.0, SenseParameter::STRATONOVICH).unwrap();
        let e = simulate_ensemble(&m, &[0.7], 0.1, 0.01, 20, 3, &EnsembleOptions::default()).unwrap();
        assert!(e.states.iter().all(|&v| v == 0.7));
        assert_eq!(e.times.len(), 11);
    }

    #[test]
    fn dt_must_divide_horizon() {
        let m = geo(SenseParameter::ITO);
        let err = simulate_ensemble(&m, &[1.0], 1.0, 0.3, 2, 0, &EnsembleOptions::default());
        assert!(matches!(err, Err(Error::Config { .. })));
    }

    #[test]
    fn multi_sense_matches_separate_runs() {
        let m = geo(SenseParameter::ITO);
        let opts = EnsembleOptions {
            record_stride: 5,
            ..Default::default()
        };
        let senses = [SenseParameter::ITO, SenseParameter::new(0.3).unwrap()];
        let both = simulate_ensemble_senses(&m, &senses, &[1.0], 0.5, 0.01, 17, 9, &opts).unwrap();
        for (s, e) in senses.iter().zip(&both) {
            let single = simulate_ensemble(&m.with_sense(*s), &[1.0], 0.5, 0.01, 17, 9, &opts).unwrap();
            assert_eq!(&single, e);
        }
    }

    #[test]
    fn scalar_loop_matches_general_stepping() {
        let m = geometric(2.0, 0.3, 0.5, 2.0, SenseParameter::ITO).unwrap();
        let plain = SdeModel::new("plain", m.drift().clone(), m.noise().clone(), SenseParameter::ITO).unwrap();
        let senses = [SenseParameter::ITO, SenseParameter::STRATONOVICH, SenseParameter::HANGGI];
        for policy in [ExitPolicy::Absorb, ExitPolicy::Reflect] {
            let opts = EnsembleOptions {
                record_stride: 4,
                exit_policy: policy,
            };
            let fast = simulate_ensemble_senses(&m, &senses, &[1.0], 1.0, 0.01, 40, 5, &opts).unwrap();
            let slow = simulate_ensemble_senses(&plain, &senses, &[1.0], 1.0, 0.01, 40, 5, &opts).unwrap();
            let run = RunSetup {
                dt: 0.01,
                stride: 4,
                policy,
            };
            for (s, sense) in senses.iter().enumerate() {
                assert_eq!(fast[s].states, slow[s].states);
                assert_eq!(fast[s].report, slow[s].report);
                let mem = PathSetup {
                    model: &m,
                    alpha: sense.value(),
                    x0: &[1.0],
                    lo: m.domain().lo(),
                    hi: m.domain().hi(),
                };
                let mut ws = Workspace::new(1, 1);
                for p in 0..40 {
                    let mut rng = RngStreamSpec::new(5, p).rng();
                    let dws: Vec<f64> = (0..100).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
                    let (mut rec, mut report) = (Vec::new(), StepReport::default());
                    run.run(&mem, &dws, &mut ws, &mut rec, &mut report).unwrap();
                    let k = fast[s].n_times();
                    assert_eq!(rec, fast[s].states[p as usize * k..(p as usize + 1) * k]);
                }
            }
        }
    }

    #[test]
    fn coupled_members_match_separate_runs() {
        let g = geo(SenseParameter::STRATONOVICH);
        let w = constant_noise(1.0, 30.0, SenseParameter::ITO).unwrap();
        let opts = EnsembleOptions::default();
        let members = [
            CoupledMember {
                model: &g,
                sense: SenseParameter::STRATONOVICH,
                x0: &[2.0],
            },
            CoupledMember {
                model: &w,
                sense: SenseParameter::ITO,
                x0: &[0.0],
            },
        ];
        let out = simulate_coupled(&members, 0.2, 0.01, 9, 4, &opts).unwrap();
        assert_eq!(out[0], simulate_ensemble(&g, &[2.0], 0.2, 0.01, 9, 4, &opts).unwrap());
        assert_eq!(out[1], simulate_ensemble(&w, &[0.0], 0.2, 0.01, 9, 4, &opts).unwrap());
        // the unit-noise member is the driving Wiener path itself
        let (a, b) = (out[0].state(3, 20)[0], out[1].state(3, 20)[0]);
        assert!((a.ln() - 2f64.ln() - 0.5 * b).abs() < 0.05);
    }

    #[test]
    fn absorb_and_reflect_policies() {
        let m = geometric(2.0, 0.0, 0.5, 2.0, SenseParameter::ITO).unwrap();
        let absorb = simulate_ensemble(&m, &[1.0], 1.0, 0.01, 50, 1, &EnsembleOptions::default()).unwrap();
        assert!(absorb.report.absorbed_paths > 0);
        assert_eq!(absorb.report.absorbed_paths, absorb.report.rejected_steps);
        let reflect = simulate_ensemble(
            &m,
            &[1.0],
            1.0,
            0.01,
            50,
            1,
            &EnsembleOptions {
                exit_policy: ExitPolicy::Reflect,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(reflect.states.iter().all(|v| (0.5..=2.0).contains(v)));
        let abort = simulate_ensemble(
            &m,
            &[1.0],
            1.0,
            0.01,
            50,
            1,
            &EnsembleOptions {
                exit_policy: ExitPolicy::Abort,
                ..Default::default()
            },
        );
        assert!(matches!(abort, Err(Error::Domain { .. })));
    }

    #[test]
    fn csv_header_and_rows() {
        let m = constant_noise(1.0, 10.0, SenseParameter::ITO).unwrap();
        let e = simulate_ensemble(&m, &[0.0], 0.02, 0.01, 2, 3, &EnsembleOptions::default()).unwrap();
        let csv = e.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "path_id,t,x1");
        assert_eq!(lines.len(), 1 + 2 * 3);
        let last: Vec<f64> = lines[6].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(last[1], e.state(1, 2)[0]);
    }
}
