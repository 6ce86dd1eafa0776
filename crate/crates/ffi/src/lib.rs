//! C interface to the adaptive solver.
//!
//! Handles are opaque pointers created by `*_new`/`*_run` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`AmfemStatus`]; the message for the last failure on the calling thread
//! is available from [`amfem_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use amfem::adaptivity::{run_adaptive, AdaptiveRun, RefinementMode};
use amfem::experiments::{run_experiment, ExperimentConfig};
use amfem::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmfemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidMesh = 3,
    Singular = 4,
    Io = 5,
    OutOfRange = 6,
    Internal = 7,
    Panic = 8,
}

/// Refinement strategy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmfemMode {
    Uniform = 0,
    Adaptive = 1,
}

/// Experiment configuration.
pub struct AmfemConfig {
    inner: ExperimentConfig,
}

/// A finished adaptive run for a single polynomial degree.
pub struct AmfemRun {
    inner: AdaptiveRun,
}

/// Quantities recorded on one mesh. Errors are NaN when no exact solution
/// is known; `delta` is NaN when it is not defined.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmfemRecord {
    pub iter: usize,
    pub nel: usize,
    pub flux_dofs: usize,
    pub scalar_dofs: usize,
    pub eta: f64,
    pub eta_tilde: f64,
    pub err_full: f64,
    pub err_l2_u: f64,
    pub err_l2_nu: f64,
    pub effectivity: f64,
    pub delta: f64,
    pub marked: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> AmfemStatus {
    match err {
        Error::InvalidDomain(_) | Error::InvalidMesh(_) => AmfemStatus::InvalidMesh,
        Error::Singular(_) => AmfemStatus::Singular,
        Error::Io(_) => AmfemStatus::Io,
        Error::ElementOutOfRange(..) => AmfemStatus::OutOfRange,
        Error::InvalidParameter(_) | Error::InvalidDegree(_) | Error::UnknownExperiment(_) | Error::Json(_) => AmfemStatus::InvalidArgument,
        _ => AmfemStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AmfemStatus, String)>) -> AmfemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmfemStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AmfemStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (AmfemStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AmfemStatus, String) {
    (AmfemStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (AmfemStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (AmfemStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn config_mut<'a>(cfg: *mut AmfemConfig) -> Result<&'a mut ExperimentConfig, (AmfemStatus, String)> {
    cfg.as_mut().map(|c| &mut c.inner).ok_or_else(|| null("config"))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn amfem_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Create a configuration for a named experiment (`smooth`, `lshape`,
/// `advdiff`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amfem_config_new(name: *const c_char, out: *mut *mut AmfemConfig) -> AmfemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let id = read_str(name, "name")?.parse().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AmfemConfig { inner: ExperimentConfig::new(id) }));
        Ok(())
    })
}

/// Create a configuration from a JSON document with the same fields as the
/// command-line configuration file.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amfem_config_from_json(json: *const c_char, out: *mut *mut AmfemConfig) -> AmfemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner: ExperimentConfig = serde_json::from_str(read_str(json, "json")?).map_err(|e| lib_err(e.into()))?;
        inner.validate().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AmfemConfig { inner }));
        Ok(())
    })
}

/// Release a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amfem_config_free(cfg: *mut AmfemConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Set the polynomial degrees used by [`amfem_experiment_run`].
///
/// # Safety
/// `cfg` must be a live handle and `degrees` valid for `count` reads.
#[no_mangle]
pub unsafe extern "C" fn amfem_config_set_degrees(cfg: *mut AmfemConfig, degrees: *const usize, count: usize) -> AmfemStatus {
    guard(|| {
        let c = config_mut(cfg)?;
        if degrees.is_null() {
            return Err(null("degrees"));
        }
        let old = std::mem::replace(&mut c.p, std::slice::from_raw_parts(degrees, count).to_vec());
        c.validate().map_err(|e| {
            c.p = old;
            lib_err(e)
        })
    })
}

/// Set refinement mode, bulk fraction and number of meshes.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfem_config_set_loop(cfg: *mut AmfemConfig, mode: AmfemMode, theta: f64, iterations: usize) -> AmfemStatus {
    guard(|| {
        let c = config_mut(cfg)?;
        let old = (c.mode, c.theta, c.iterations);
        c.mode = match mode {
            AmfemMode::Uniform => RefinementMode::Uniform,
            AmfemMode::Adaptive => RefinementMode::Adaptive,
        };
        c.theta = theta;
        c.iterations = iterations;
        c.validate().map_err(|e| {
            (c.mode, c.theta, c.iterations) = old;
            lib_err(e)
        })
    })
}

/// Set the output directory used by [`amfem_experiment_run`].
///
/// # Safety
/// `cfg` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amfem_config_set_output(cfg: *mut AmfemConfig, dir: *const c_char) -> AmfemStatus {
    guard(|| {
        let c = config_mut(cfg)?;
        c.out = PathBuf::from(read_str(dir, "dir")?);
        Ok(())
    })
}

/// Run every configured degree and write the convergence tables, logs and
/// mesh dumps under the output directory.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfem_experiment_run(cfg: *const AmfemConfig) -> AmfemStatus {
    guard(|| {
        let c = &cfg.as_ref().ok_or_else(|| null("config"))?.inner;
        let summary = run_experiment(c).map_err(lib_err)?;
        for r in &summary.runs {
            if let Some(f) = &r.failure {
                return Err((AmfemStatus::Internal, format!("p={}: {f}", r.p)));
            }
            if let Some(e) = r.io_errors.first() {
                return Err((AmfemStatus::Io, e.clone()));
            }
        }
        Ok(())
    })
}

/// Run the loop in memory for one degree without writing files.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amfem_run(cfg: *const AmfemConfig, p: usize, out: *mut *mut AmfemRun) -> AmfemStatus {
    guard(|| {
        let c = &cfg.as_ref().ok_or_else(|| null("config"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut params = c.loop_params(p);
        params.export_dir = None;
        let problem = c.problem().map_err(lib_err)?;
        let inner = run_adaptive(&problem, &params).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AmfemRun { inner }));
        Ok(())
    })
}

/// Release a run. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn amfem_run_free(run: *mut AmfemRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of meshes recorded in a run; 0 for null.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfem_run_len(run: *const AmfemRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.records.len())
}

/// Nonzero when the loop stopped on a failure before finishing.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfem_run_failed(run: *const AmfemRun) -> i32 {
    run.as_ref().map_or(0, |r| r.inner.failure.is_some() as i32)
}

/// Copy record `index` of a run into `out`.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn amfem_run_record(run: *const AmfemRun, index: usize, out: *mut AmfemRecord) -> AmfemStatus {
    guard(|| {
        let r = &run.as_ref().ok_or_else(|| null("run"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let rec = r
            .records
            .get(index)
            .ok_or_else(|| (AmfemStatus::OutOfRange, format!("record {index} out of range ({} records)", r.records.len())))?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = AmfemRecord {
            iter: rec.iter,
            nel: rec.nel,
            flux_dofs: rec.flux_dofs,
            scalar_dofs: rec.scalar_dofs,
            eta: rec.eta,
            eta_tilde: rec.eta_tilde,
            err_full: nan(rec.err_full),
            err_l2_u: nan(rec.err_l2_u),
            err_l2_nu: nan(rec.err_l2_nu),
            effectivity: nan(rec.effectivity),
            delta: if rec.delta_degenerate { f64::NAN } else { nan(rec.delta) },
            marked: rec.marked,
        };
        Ok(())
    })
}
