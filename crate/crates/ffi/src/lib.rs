//! C ABI over the `hrsnn` toolkit.
//!
//! Conventions:
//! * Every fallible function returns an `int32_t` status: [`HRSNN_OK`] or one
//!   of the `HRSNN_ERR_*` codes. The codes for configuration, numeric and I/O
//!   failures equal the exit codes of the `hrsnn` binary.
//! * After a failure, [`hrsnn_last_error`] returns a message for the calling
//!   thread.
//! * Configurations and models are opaque handles created by `*_load`,
//!   `*_parse`, `*_build`, ... through an out-pointer and released with the
//!   matching `*_free`. Strings returned through out-pointers are released
//!   with [`hrsnn_string_free`].
//! * Seeds follow the binary: every stage uses the configuration's seed
//!   (settable with [`hrsnn_config_set_seed`]), so `hrsnn_model_build` with
//!   seed `s` yields the same network as `hrsnn build --seed s`.
//! * Panics never cross the boundary; they surface as [`HRSNN_ERR_PANIC`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hrsnn::config::{ExperimentConfig, Task};
use hrsnn::error::Error;
use hrsnn::lnp::PrunedModel;
use hrsnn::model::{build_model, capacity_run};
use hrsnn::runner::{evaluate_model, load_model, prune_model, save_model, stage, train_on_task, Invocation};

/// Success.
pub const HRSNN_OK: i32 = 0;
/// Invalid configuration or input (exit code 2 of the binary).
pub const HRSNN_ERR_CONFIG: i32 = 2;
/// Numerical failure (exit code 3).
pub const HRSNN_ERR_NUMERIC: i32 = 3;
/// File could not be read, written or parsed (exit code 4).
pub const HRSNN_ERR_IO: i32 = 4;
/// A required pointer was null or a string was not valid UTF-8.
pub const HRSNN_ERR_ARGUMENT: i32 = 5;
/// Internal error (a caught panic).
pub const HRSNN_ERR_PANIC: i32 = 6;

/// Opaque experiment configuration.
pub struct HrsnnConfig {
    inner: ExperimentConfig,
}

/// Opaque model: network graph plus per-neuron parameters.
pub struct HrsnnModel {
    inner: PrunedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Core(Error),
    Argument(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, translate its failure into a status code and record the message.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> i32 {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HRSNN_OK,
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            e.exit_code()
        }
        Ok(Err(Failure::Argument(msg))) => {
            set_last_error(msg);
            HRSNN_ERR_ARGUMENT
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("internal error: {msg}"));
            HRSNN_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Argument(format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Argument(format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure::Argument(format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure::Argument(format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Argument("out is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Argument("out is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure::Argument("string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Validated invocation for `cfg` with the binary's defaults.
fn invocation(cfg: &HrsnnConfig) -> FfiResult<Invocation> {
    let inv = Invocation::new(cfg.inner.clone(), None, None, None, None)?;
    inv.cfg.validate()?;
    Ok(inv)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrsnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if the last call
/// succeeded. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn hrsnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default configuration (no seed set).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_config_default(out: *mut *mut HrsnnConfig) -> i32 {
    guard(|| put(out, HrsnnConfig { inner: ExperimentConfig::default() }))
}

/// Parse configuration text; unknown sections or keys are errors.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_config_parse(text: *const c_char, out: *mut *mut HrsnnConfig) -> i32 {
    guard(|| {
        let cfg = ExperimentConfig::parse(str_arg(text, "text")?)?;
        cfg.validate()?;
        put(out, HrsnnConfig { inner: cfg })
    })
}

/// Load a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_config_load(path: *const c_char, out: *mut *mut HrsnnConfig) -> i32 {
    guard(|| {
        let cfg = ExperimentConfig::from_file(&PathBuf::from(str_arg(path, "path")?))?;
        cfg.validate()?;
        put(out, HrsnnConfig { inner: cfg })
    })
}

/// Set the master seed.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_config_set_seed(cfg: *mut HrsnnConfig, seed: u64) -> i32 {
    guard(|| {
        mut_arg(cfg, "cfg")?.inner.seed = Some(seed);
        Ok(())
    })
}

/// Set the task: `lorenz63`, `lorenz96`, `rossler` or `synth-class`.
///
/// # Safety
/// `cfg` must be a live handle and `task` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_config_set_task(cfg: *mut HrsnnConfig, task: *const c_char) -> i32 {
    guard(|| {
        let task = Task::parse(str_arg(task, "task")?)?;
        mut_arg(cfg, "cfg")?.inner.task = task;
        Ok(())
    })
}

/// Release a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_config_free(cfg: *mut HrsnnConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Build a network and draw its neuron parameters (the `build` stage).
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_build(cfg: *const HrsnnConfig, out: *mut *mut HrsnnModel) -> i32 {
    guard(|| {
        let inv = invocation(ref_arg(cfg, "cfg")?)?;
        let model = build_model(&inv.cfg.topology, &inv.cfg.neuron_profile(), inv.stage_seed(stage::BUILD))?;
        put(out, HrsnnModel { inner: model })
    })
}

/// Load a snapshot (graph file plus its `.params.json` sidecar).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_load(path: *const c_char, out: *mut *mut HrsnnModel) -> i32 {
    guard(|| {
        let model = load_model(&PathBuf::from(str_arg(path, "path")?))?;
        put(out, HrsnnModel { inner: model })
    })
}

/// Save a snapshot (graph file plus its `.params.json` sidecar).
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_save(model: *const HrsnnModel, path: *const c_char) -> i32 {
    guard(|| {
        save_model(&PathBuf::from(str_arg(path, "path")?), &ref_arg(model, "model")?.inner)?;
        Ok(())
    })
}

/// Number of neurons (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_n_neurons(model: *const HrsnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.graph.n_nodes())
}

/// Number of synapses (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_n_synapses(model: *const HrsnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.graph.n_edges())
}

/// STDP-train on the configured task stream (the `train` stage); the trained
/// model is a new handle.
///
/// # Safety
/// `model` and `cfg` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_train(model: *const HrsnnModel, cfg: *const HrsnnConfig, out: *mut *mut HrsnnModel) -> i32 {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let inv = invocation(ref_arg(cfg, "cfg")?)?;
        let trained = train_on_task(&model.inner, &inv)?;
        put(out, HrsnnModel { inner: trained.model })
    })
}

/// Prune with the configured method (the `prune` stage); the final model is
/// a new handle.
///
/// # Safety
/// `model` and `cfg` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_prune(model: *const HrsnnModel, cfg: *const HrsnnConfig, out: *mut *mut HrsnnModel) -> i32 {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let inv = invocation(ref_arg(cfg, "cfg")?)?;
        let pruned = prune_model(&model.inner, &inv)?.into_model(&model.inner);
        put(out, HrsnnModel { inner: pruned })
    })
}

/// Memory capacity on white noise and the mean spike count per neuron of the
/// same run, with the evaluate-stage seed.
///
/// # Safety
/// `model` and `cfg` must be live handles; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_memory_capacity(
    model: *const HrsnnModel,
    cfg: *const HrsnnConfig,
    out_capacity: *mut f64,
    out_mean_spikes: *mut f64,
) -> i32 {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let inv = invocation(ref_arg(cfg, "cfg")?)?;
        let capacity = mut_arg(out_capacity, "out_capacity")?;
        let mean_spikes = mut_arg(out_mean_spikes, "out_mean_spikes")?;
        let m = &inv.cfg.metrics;
        let run = capacity_run(&model.inner, &inv.cfg.model, m.capacity_samples, m.tau_max, inv.stage_seed(stage::EVALUATE))?;
        *capacity = run.capacity.total;
        *mean_spikes = run.stats.mean_count;
        Ok(())
    })
}

/// Evaluate on the configured task (the `evaluate` stage) and return the
/// report as JSON. `extended` adds capacity, efficiency and separation rank;
/// `reference` (nullable) is the dense parent model for the SOP ratio.
///
/// # Safety
/// `model` and `cfg` must be live handles, `reference` null or a live
/// handle, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_evaluate_json(
    model: *const HrsnnModel,
    cfg: *const HrsnnConfig,
    extended: bool,
    reference: *const HrsnnModel,
    out: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let mut inv = invocation(ref_arg(cfg, "cfg")?)?;
        inv.extended = extended;
        let reference = reference.as_ref().map(|r| &r.inner);
        let report = evaluate_model(&model.inner, &inv, reference)?;
        let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        put_string(out, json)
    })
}

/// Graph snapshot JSON of the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_snapshot_json(model: *const HrsnnModel, out: *mut *mut c_char) -> i32 {
    guard(|| put_string(out, ref_arg(model, "model")?.inner.graph.to_snapshot_json()))
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_model_free(model: *mut HrsnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrsnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
