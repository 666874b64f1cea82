//! The `sense-forge` command line.
//!
//! Exit codes: 0 ok, 1 claim failure or internal error, 2 config,
//! 3 domain-exit budget, 4 singular noise, 5 rank variation, 6 stability.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::chart::{
    build_chart_1d, build_chart_2d, build_chart_diagonal, validate_chart, CoordinateChart, EigenMode,
};
use crate::claims::{self, ClaimId, ClaimReport};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::{DomainBox, MatrixField};
use crate::fpe::{fpe_evolve, max_stable_dt, Axis, DensityGrid};
use crate::integrator::{simulate_ensemble, EnsembleOptions, ExitPolicy};
use crate::io::write_json;
use crate::model::ModelSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_SINGULAR: i32 = 4;
pub const EXIT_RANK: i32 = 5;
pub const EXIT_STABILITY: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "sense-forge", version, about = "Integration-sense experiments for SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Registry model name.
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    #[arg(long, value_name = "FLOAT", allow_negative_numbers = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an ensemble and write CSV plus a JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of paths.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        record_stride: Option<usize>,
        /// absorb, reflect or abort.
        #[arg(long)]
        exit_policy: Option<String>,
    },
    /// Build the unit-diffusion chart and write it with its validation report.
    Transform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Evolve a density under the Fokker-Planck equation.
    Fpe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Run the claim experiments and write their reports.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Run every claim, ignoring `claims.enabled`.
        #[arg(long)]
        all: bool,
        /// Run only the named claim (repeatable).
        #[arg(long)]
        claim: Vec<String>,
    },
    /// Rebuild the markdown summary from the reports in the output directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Transform { common, .. }
            | Command::Fpe { common, .. }
            | Command::Verify { common, .. }
            | Command::Report { common } => common,
        }
    }
}

/// Maps an error to its stable exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Expression(_) => EXIT_CONFIG,
        Error::Domain { .. } => EXIT_DOMAIN,
        Error::SingularNoise { .. } | Error::SingularJacobian(_) => EXIT_SINGULAR,
        Error::RankVariation(_) => EXIT_RANK,
        Error::Stability { .. } => EXIT_STABILITY,
        _ => EXIT_FAILURE,
    }
}

/// Layers the config file and the flags over the defaults.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.claims.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(name) = &common.model {
        let same = matches!(&cfg.model, ModelSpec::Registry { name: n, .. } if n == name);
        if !same {
            cfg.model = ModelSpec::named(name);
        }
    }
    if let Some(alpha) = common.alpha {
        cfg.alpha = alpha;
    }
    Ok(cfg)
}

fn apply_command_flags(cfg: &mut RunConfig, command: &Command) -> Result<()> {
    match command {
        Command::Simulate {
            n,
            t_end,
            dt,
            x0,
            record_stride,
            exit_policy,
            ..
        } => {
            set(&mut cfg.n_paths, *n);
            set(&mut cfg.t_end, *t_end);
            set(&mut cfg.dt, *dt);
            set(&mut cfg.record_stride, *record_stride);
            if x0.is_some() {
                cfg.x0 = x0.clone();
            }
            if let Some(p) = exit_policy {
                cfg.exit_policy = serde_json::from_value(serde_json::Value::String(p.clone()))
                    .map_err(|_| Error::config("exit_policy", "expected absorb, reflect or abort"))?;
            }
        }
        Command::Transform { grid, .. } => set(&mut cfg.chart.grid, *grid),
        Command::Fpe { grid, dt, t_end, .. } => {
            set(&mut cfg.fpe.grid, *grid);
            set(&mut cfg.t_end, *t_end);
            if dt.is_some() {
                cfg.fpe.dt = *dt;
            }
        }
        Command::Verify { .. } | Command::Report { .. } => {}
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Caps the rayon pool at `SENSE_FORGE_THREADS` workers when set.
pub fn init_threads() {
    if let Some(n) = std::env::var("SENSE_FORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: &Command) -> Result<i32> {
    let mut cfg = resolve_config(command.common())?;
    apply_command_flags(&mut cfg, command)?;
    match command {
        Command::Verify { .. } | Command::Report { .. } => {}
        _ => cfg.validate()?,
    }
    match command {
        Command::Simulate { .. } => cmd_simulate(&cfg),
        Command::Transform { .. } => cmd_transform(&cfg),
        Command::Fpe { .. } => cmd_fpe(&cfg),
        Command::Verify { all, claim, .. } => {
            if *all {
                cfg.claims.enabled = ClaimId::ALL.to_vec();
            } else if !claim.is_empty() {
                cfg.claims.enabled = claim.iter().map(|c| c.parse()).collect::<Result<_>>()?;
            }
            cmd_verify(&cfg)
        }
        Command::Report { .. } => cmd_report(&cfg.out),
    }
}

/// Writes `ensemble.csv` and `ensemble.json` to the output directory.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let model = cfg.build_model()?;
    let x0 = cfg.initial_state(&model);
    let opts = EnsembleOptions {
        record_stride: cfg.record_stride,
        exit_policy: cfg.exit_policy,
    };
    let ens = simulate_ensemble(&model, &x0, cfg.t_end, cfg.dt, cfg.n_paths, cfg.seed, &opts)?;
    ens.export(&cfg.out, "ensemble")?;
    let exits = ens.report.rejected_steps as f64 / cfg.n_paths as f64;
    println!(
        "simulated {} paths of {} at alpha = {} (domain exits per path {exits})",
        cfg.n_paths,
        model.name(),
        cfg.alpha
    );
    if cfg.exit_policy != ExitPolicy::Abort && exits > cfg.max_exit_fraction {
        eprintln!(
            "error: domain exits per path {exits} exceed max_exit_fraction {}",
            cfg.max_exit_fraction
        );
        return Ok(EXIT_DOMAIN);
    }
    Ok(EXIT_OK)
}

fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let log = lo > 0.0;
    let (a, b) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
    (0..n)
        .map(|i| {
            let t = a + (b - a) * (i as f64 + 0.5) / n as f64;
            if log {
                t.exp()
            } else {
                t
            }
        })
        .collect()
}

/// Tensor grid of validation points, log-spaced on positive axes.
fn validation_points(lo: &[f64], hi: &[f64], total: usize) -> Vec<Vec<f64>> {
    let n = lo.len();
    let per_axis = ((total as f64).powf(1.0 / n as f64).round() as usize).max(1);
    let axes: Vec<Vec<f64>> = (0..n).map(|i| midpoints(lo[i], hi[i], per_axis)).collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

fn is_identity(d: &MatrixField, lo: &[f64], hi: &[f64]) -> Result<bool> {
    let n = lo.len();
    for p in validation_points(lo, hi, 5usize.pow(n as u32)) {
        let m = d.eval(&p)?;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                if (m[(i, j)] - target).abs() > 1e-12 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Builds the chart for the model's diffusion on the configured box.
pub fn build_chart(cfg: &RunConfig) -> Result<(CoordinateChart, MatrixField, Vec<Vec<f64>>)> {
    let model = cfg.build_model()?;
    let d = MatrixField::diffusion_of(model.noise());
    let (lo, hi) = cfg.chart_range(&model);
    let reference = cfg.chart_reference(&lo, &hi);
    let n = lo.len();
    let chart = if n == 1 {
        build_chart_1d(&d, lo[0], hi[0], reference[0], cfg.chart.grid)?
    } else if is_identity(&d, &lo, &hi)? {
        CoordinateChart::identity(DomainBox::new(lo.clone(), hi.clone())?)
    } else {
        match build_chart_diagonal(&d, &lo, &hi, &reference, cfg.chart.grid, EigenMode::Diffusion) {
            Ok(c) => c,
            Err(Error::Contract(_)) if n == 2 => {
                let g = cfg.chart.grid_2d;
                build_chart_2d(&d, [lo[0], lo[1]], [hi[0], hi[1]], [reference[0], reference[1]], g, g)?
            }
            Err(e) => return Err(e),
        }
    };
    let points = validation_points(&lo, &hi, cfg.chart.validation_points);
    Ok((chart, d, points))
}

/// Writes `chart.json` and `validation.json`.
pub fn cmd_transform(cfg: &RunConfig) -> Result<i32> {
    let (chart, d, points) = build_chart(cfg)?;
    let report = validate_chart(&chart, &d, &points)?;
    let chart = chart.with_validation(report.clone());
    write_json(&cfg.out.join("chart.json"), &chart.to_record())?;
    write_json(&cfg.out.join("validation.json"), &report)?;
    println!(
        "{:?} chart on {} points: round trip {:e}, D* residual {:e}, a_sp* residual {:e}",
        chart.kind(),
        report.points,
        report.round_trip_max,
        report.diffusion_residual_max,
        report.spurious_residual_max
    );
    Ok(EXIT_OK)
}

/// Writes `density_000` (initial) through `density_<snapshots>` as CSV
/// plus JSON sidecars.
pub fn cmd_fpe(cfg: &RunConfig) -> Result<i32> {
    let model = cfg.build_model()?;
    if model.state_dim() != 1 {
        return Err(Error::config("model", "the Fokker-Planck solver is one-dimensional"));
    }
    let (lo, hi) = cfg.fpe_range(&model);
    let axis = Axis::new(lo, hi, cfg.fpe.grid)?;
    let mean = cfg.fpe.initial_mean.unwrap_or(cfg.initial_state(&model)[0]);
    let s = cfg.fpe.initial_std;
    let mut w = DensityGrid::from_fn(axis, cfg.fpe.boundary, |x| (-0.5 * ((x - mean) / s).powi(2)).exp())?
        .normalized()?;
    let max_dt = max_stable_dt(&model, &axis)?;
    let dt = match cfg.fpe.dt {
        Some(dt) if dt > max_dt => return Err(Error::Stability { dt, max_dt }),
        Some(dt) => dt,
        None => cfg.fpe.dt_fraction * max_dt,
    };
    let segment = cfg.t_end / cfg.fpe.snapshots as f64;
    w.export(&cfg.out, "density_000")?;
    for k in 1..=cfg.fpe.snapshots {
        w = fpe_evolve(&model, &w, segment, dt.min(segment))?;
        w.export(&cfg.out, &format!("density_{k:03}"))?;
    }
    println!(
        "evolved {} at alpha = {} to T = {} on {} nodes (dt {dt:e}, mass {})",
        model.name(),
        cfg.alpha,
        cfg.t_end,
        cfg.fpe.grid,
        w.mass()
    );
    Ok(EXIT_OK)
}

fn print_verdicts(reports: &[ClaimReport]) {
    for r in reports {
        println!("{:<24} {}", r.claim_id.as_str(), r.verdict);
    }
}

/// Runs the enabled claims, writes their reports and exits 0 iff none fails.
pub fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let reports = claims::run_all(&cfg.claims);
    claims::write_reports(&cfg.out, &reports)?;
    print_verdicts(&reports);
    Ok(if claims::all_passed(&reports) { EXIT_OK } else { EXIT_FAILURE })
}

/// Re-reads `reports.json` and rewrites `summary.md`.
pub fn cmd_report(out: &Path) -> Result<i32> {
    let path = out.join("reports.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let reports: Vec<ClaimReport> = serde_json::from_str(&text)?;
    let summary = claims::summary_markdown(&reports);
    crate::io::write_atomic(&out.join("summary.md"), summary.as_bytes())?;
    print!("{summary}");
    Ok(if claims::all_passed(&reports) { EXIT_OK } else { EXIT_FAILURE })
}
