//! C ABI over sense-forge.
//!
//! Models, charts and ensembles cross the boundary as opaque handles that the
//! caller releases with the matching `*_free`. Every fallible call returns an
//! [`SfStatus`]; the message of the last failure on the calling thread is
//! available from [`sf_last_error_message`]. Strings handed out by this
//! library are released with [`sf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sense_forge::chart::CoordinateChart;
use sense_forge::claims::{run_claim, ClaimId};
use sense_forge::cli::build_chart;
use sense_forge::config::RunConfig;
use sense_forge::diffusion::{ito_equivalent_drift, spurious_drift_from_noise};
use sense_forge::integrator::{alpha_euler_step, simulate_ensemble, EnsembleOptions, PathEnsemble};
use sense_forge::model::SdeModel;
use sense_forge::Error;

/// Status codes. The nonzero library codes match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    Failure = 1,
    Config = 2,
    Domain = 3,
    Singular = 4,
    RankVariation = 5,
    Stability = 6,
    NullArgument = 7,
    InvalidUtf8 = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A model built from a run configuration.
pub struct SfModel {
    config: RunConfig,
    model: SdeModel,
}

/// A validated coordinate chart.
pub struct SfChart {
    chart: CoordinateChart,
}

/// Recorded paths of one ensemble, path-major then time then coordinate.
pub struct SfEnsemble {
    ensemble: PathEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SfStatus {
    match e {
        Error::Config { .. } | Error::Expression(_) => SfStatus::Config,
        Error::Domain { .. } => SfStatus::Domain,
        Error::SingularNoise { .. } | Error::SingularJacobian(_) => SfStatus::Singular,
        Error::RankVariation(_) => SfStatus::RankVariation,
        Error::Stability { .. } => SfStatus::Stability,
        _ => SfStatus::Failure,
    }
}

struct Fail(SfStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn fail(status: SfStatus, msg: &str) -> Fail {
    set_error(msg);
    Fail(status)
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(SfStatus::NullArgument, &format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SfStatus::InvalidUtf8, &format!("`{what}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| fail(SfStatus::NullArgument, &format!("`{what}` is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SfStatus::NullArgument, &format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `src` into the caller's buffer of `len` doubles.
unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(fail(
            SfStatus::BufferTooSmall,
            &format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if out.is_null() {
        return Err(fail(SfStatus::NullArgument, "`out` is null"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(SfStatus::NullArgument, "`out` is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(SfStatus::NullArgument, "`out` is null"));
    }
    *out = CString::new(s)
        .map_err(|_| fail(SfStatus::Failure, "string contains a NUL byte"))?
        .into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null if none.
/// Release it with [`sf_string_free`].
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a model from a JSON run configuration. Null or `""` means all
/// defaults; absent keys keep their defaults.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_model_new(config_json: *const c_char, out: *mut *mut SfModel) -> SfStatus {
    guard(|| {
        let text = if config_json.is_null() { "" } else { str_arg(config_json, "config_json")? };
        let config = if text.trim().is_empty() {
            RunConfig::default()
        } else {
            RunConfig::from_json(text)?
        };
        config.validate()?;
        let model = config.build_model()?;
        write_handle(out, SfModel { config, model })
    })
}

/// # Safety
/// `model` must be null or a handle from [`sf_model_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_model_state_dim(model: *const SfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.state_dim())
}

/// Noise dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_model_noise_dim(model: *const SfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.noise_dim())
}

/// Sense parameter α, or NaN for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_model_alpha(model: *const SfModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.model.sense().value())
}

/// Writes the spurious drift `a_sp(x)` into `out`.
///
/// # Safety
/// `x` must hold `n` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn sf_model_spurious_drift(
    model: *const SfModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let a = spurious_drift_from_noise(m.model.noise(), slice_arg(x, n, "x")?)?;
        copy_out(&a, out, out_len)
    })
}

/// Writes the Itô-equivalent drift `a(x) + α a_sp(x)` into `out`.
///
/// # Safety
/// `x` must hold `n` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn sf_model_ito_drift(
    model: *const SfModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let a = ito_equivalent_drift(&m.model, slice_arg(x, n, "x")?)?;
        copy_out(&a, out, out_len)
    })
}

/// One α-sense Euler step from `x` with increment `dw` over `dt`.
///
/// # Safety
/// `x` must hold `n` doubles, `dw` hold `m`, `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn sf_model_step(
    model: *const SfModel,
    x: *const f64,
    n: usize,
    dw: *const f64,
    m: usize,
    dt: f64,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let h = ref_arg(model, "model")?;
        let next = alpha_euler_step(&h.model, slice_arg(x, n, "x")?, slice_arg(dw, m, "dw")?, dt)?;
        copy_out(&next, out, out_len)
    })
}

/// Simulates the ensemble the model's configuration describes.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_simulate(model: *const SfModel, out: *mut *mut SfEnsemble) -> SfStatus {
    guard(|| {
        let h = ref_arg(model, "model")?;
        let c = &h.config;
        let opts = EnsembleOptions {
            record_stride: c.record_stride,
            exit_policy: c.exit_policy,
        };
        let x0 = c.initial_state(&h.model);
        let ensemble = simulate_ensemble(&h.model, &x0, c.t_end, c.dt, c.n_paths, c.seed, &opts)?;
        write_handle(out, SfEnsemble { ensemble })
    })
}

/// # Safety
/// `ensemble` must be null or a handle from [`sf_simulate`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_free(ensemble: *mut SfEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_n_paths(ensemble: *const SfEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ensemble.n_paths)
}

/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_n_times(ensemble: *const SfEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ensemble.n_times())
}

/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_dim(ensemble: *const SfEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ensemble.dim)
}

/// Number of domain exits over all paths.
///
/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_domain_exits(ensemble: *const SfEnsemble) -> u64 {
    ensemble.as_ref().map_or(0, |e| e.ensemble.report.rejected_steps)
}

/// Copies the recording times, `n_times` doubles.
///
/// # Safety
/// `out` must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_times(ensemble: *const SfEnsemble, out: *mut f64, out_len: usize) -> SfStatus {
    guard(|| copy_out(&ref_arg(ensemble, "ensemble")?.ensemble.times, out, out_len))
}

/// Copies every recorded state, `n_paths * n_times * dim` doubles.
///
/// # Safety
/// `out` must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_states(ensemble: *const SfEnsemble, out: *mut f64, out_len: usize) -> SfStatus {
    guard(|| copy_out(&ref_arg(ensemble, "ensemble")?.ensemble.states, out, out_len))
}

/// Copies coordinate `component` of every path at the final time.
///
/// # Safety
/// `out` must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_ensemble_final(
    ensemble: *const SfEnsemble,
    component: usize,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let e = &ref_arg(ensemble, "ensemble")?.ensemble;
        if component >= e.dim {
            return Err(fail(SfStatus::Config, "`component` exceeds the state dimension"));
        }
        copy_out(&e.final_marginal(component), out, out_len)
    })
}

/// Builds the unit-diffusion chart for the model's configuration.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_chart_build(model: *const SfModel, out: *mut *mut SfChart) -> SfStatus {
    guard(|| {
        let h = ref_arg(model, "model")?;
        let (chart, _, _) = build_chart(&h.config)?;
        write_handle(out, SfChart { chart })
    })
}

/// # Safety
/// `chart` must be null or a handle from [`sf_chart_build`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sf_chart_free(chart: *mut SfChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

/// # Safety
/// `chart` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_chart_dim(chart: *const SfChart) -> usize {
    chart.as_ref().map_or(0, |c| c.chart.dim())
}

/// `z = φ(x)`.
///
/// # Safety
/// `x` must hold `n` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn sf_chart_forward(
    chart: *const SfChart,
    x: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let c = ref_arg(chart, "chart")?;
        copy_out(&c.chart.forward(slice_arg(x, n, "x")?)?, out, out_len)
    })
}

/// `x = φ⁻¹(z)`.
///
/// # Safety
/// `z` must hold `n` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn sf_chart_inverse(
    chart: *const SfChart,
    z: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> SfStatus {
    guard(|| {
        let c = ref_arg(chart, "chart")?;
        copy_out(&c.chart.inverse(slice_arg(z, n, "z")?)?, out, out_len)
    })
}

/// The chart record as JSON. Release it with [`sf_string_free`].
///
/// # Safety
/// `chart` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_chart_to_json(chart: *const SfChart, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        let c = ref_arg(chart, "chart")?;
        let json = serde_json::to_string_pretty(&c.chart.to_record())
            .map_err(|e| fail(SfStatus::Failure, &e.to_string()))?;
        write_string(out, json)
    })
}

/// Runs one claim with the `claims` section of a JSON run configuration and
/// returns its report as JSON. A failed claim is still [`SfStatus::Ok`];
/// read its verdict from the report.
///
/// # Safety
/// `config_json` must be null or NUL-terminated, `claim_id` NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_run_claim(
    config_json: *const c_char,
    claim_id: *const c_char,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        let text = if config_json.is_null() { "" } else { str_arg(config_json, "config_json")? };
        let config = if text.trim().is_empty() {
            RunConfig::default()
        } else {
            RunConfig::from_json(text)?
        };
        let id: ClaimId = str_arg(claim_id, "claim_id")?.parse()?;
        let report = run_claim(id, &config.claims);
        let json = serde_json::to_string_pretty(&report).map_err(|e| fail(SfStatus::Failure, &e.to_string()))?;
        write_string(out, json)
    })
}
