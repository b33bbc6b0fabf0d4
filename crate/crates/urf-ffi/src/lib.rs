//! C ABI for the set-valued dynamics library.
//!
//! Models cross the boundary as opaque handles created from the JSON bundle
//! format the CLI writes. Every function returns a status code; the message
//! for the most recent failure on the calling thread is available through
//! [`urf_last_error_message`]. Buffers are caller-owned, row-major, and sized
//! by the dimensions the model reports.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use libc::{c_char, size_t};
use nalgebra::DVector;
use urf_core::dynamics::{ModelBundle, UrfModel};
use urf_core::worstcase::{cost_bounds, CostFunction, Direction, SolverConfig};
use urf_core::UrfError;

/// Status codes mirroring the library's error variants.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    RankDeficient = 5,
    Diverged = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

/// Stage cost selector for trajectory cost bounds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UrfCostKind {
    Quadratic = 0,
    PendulumUpright = 1,
}

/// Opaque model handle; create with `urf_model_load` or `urf_model_from_json`
/// and release with `urf_model_free`.
pub struct UrfModelHandle {
    inner: UrfModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("interior NULs removed");
    });
}

fn status_from(err: &UrfError) -> UrfStatus {
    match err {
        UrfError::InvalidValue { .. } => UrfStatus::InvalidArgument,
        UrfError::DimensionMismatch { .. } => UrfStatus::DimensionMismatch,
        UrfError::Numerical(_) => UrfStatus::Numerical,
        UrfError::RankDeficient { .. } => UrfStatus::RankDeficient,
        UrfError::Diverged { .. } => UrfStatus::Diverged,
        UrfError::Io(_) => UrfStatus::Io,
        UrfError::Serde(_) | UrfError::Csv(_) => UrfStatus::Parse,
    }
}

fn fail(err: UrfError) -> UrfStatus {
    let status = status_from(&err);
    set_last_error(&err.to_string());
    status
}

/// Runs a fallible body, translating errors and panics into status codes.
fn guarded(body: impl FnOnce() -> Result<(), UrfError>) -> UrfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => UrfStatus::Ok,
        Ok(Err(err)) => fail(err),
        Err(_) => {
            set_last_error("internal panic crossed the FFI boundary");
            UrfStatus::Panic
        }
    }
}

fn null_arg(name: &str) -> UrfStatus {
    set_last_error(&format!("`{name}` must not be NULL"));
    UrfStatus::NullPointer
}

/// Copies the calling thread's last error message into `buffer` (NUL
/// terminated, truncated to `capacity`). Returns the full message length in
/// bytes, excluding the terminator; call with a NULL buffer to query it.
#[no_mangle]
pub extern "C" fn urf_last_error_message(buffer: *mut c_char, capacity: size_t) -> size_t {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
                *buffer.add(n) = 0;
            }
        }
        bytes.len()
    })
}

fn model_from_json_str(json: &str) -> Result<UrfModel, UrfError> {
    let bundle: ModelBundle = serde_json::from_str(json)?;
    UrfModel::from_bundle(&bundle)
}

/// Parses a model from a JSON bundle document held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urf_model_from_json(
    json: *const c_char,
    out: *mut *mut UrfModelHandle,
) -> UrfStatus {
    if json.is_null() {
        return null_arg("json");
    }
    if out.is_null() {
        return null_arg("out");
    }
    guarded(|| {
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| UrfError::invalid("json", "not valid UTF-8"))?;
        let model = model_from_json_str(text)?;
        *out = Box::into_raw(Box::new(UrfModelHandle { inner: model }));
        Ok(())
    })
}

/// Loads a model from a JSON bundle file on disk.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urf_model_load(
    path: *const c_char,
    out: *mut *mut UrfModelHandle,
) -> UrfStatus {
    if path.is_null() {
        return null_arg("path");
    }
    if out.is_null() {
        return null_arg("out");
    }
    guarded(|| {
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| UrfError::invalid("path", "not valid UTF-8"))?;
        let text = std::fs::read_to_string(path)?;
        let model = model_from_json_str(&text)?;
        *out = Box::into_raw(Box::new(UrfModelHandle { inner: model }));
        Ok(())
    })
}

/// Releases a model handle; NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer previously returned by a load function, passed
/// at most once.
#[no_mangle]
pub unsafe extern "C" fn urf_model_free(model: *mut UrfModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension of the learned system.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn urf_model_state_dim(
    model: *const UrfModelHandle,
    out: *mut size_t,
) -> UrfStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if out.is_null() {
        return null_arg("out");
    }
    *out = (*model).inner.state_dim();
    UrfStatus::Ok
}

/// Feature dimension of the weight space (after any projection).
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn urf_model_feature_dim(
    model: *const UrfModelHandle,
    out: *mut size_t,
) -> UrfStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if out.is_null() {
        return null_arg("out");
    }
    *out = (*model).inner.feature_dim();
    UrfStatus::Ok
}

/// One transition under the posterior-mean weights. `state` and `next` hold
/// `dim` doubles each; `dim` must equal the model's state dimension.
///
/// # Safety
/// `state` and `next` must point to `dim` readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn urf_model_mean_step(
    model: *const UrfModelHandle,
    state: *const f64,
    dim: size_t,
    next: *mut f64,
) -> UrfStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if state.is_null() {
        return null_arg("state");
    }
    if next.is_null() {
        return null_arg("next");
    }
    guarded(|| {
        let model = &(*model).inner;
        let x = DVector::from_column_slice(std::slice::from_raw_parts(state, dim));
        let y = model.mean_step(&x)?;
        std::ptr::copy_nonoverlapping(y.as_slice().as_ptr(), next, y.len());
        Ok(())
    })
}

/// Posterior-mean rollout. `trajectory` receives `(horizon + 1) * dim`
/// doubles, row-major with the initial state first.
///
/// # Safety
/// `x0` must point to `dim` doubles and `trajectory` to
/// `(horizon + 1) * dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn urf_model_rollout_mean(
    model: *const UrfModelHandle,
    x0: *const f64,
    dim: size_t,
    horizon: size_t,
    trajectory: *mut f64,
) -> UrfStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if x0.is_null() {
        return null_arg("x0");
    }
    if trajectory.is_null() {
        return null_arg("trajectory");
    }
    guarded(|| {
        let model = &(*model).inner;
        let x = DVector::from_column_slice(std::slice::from_raw_parts(x0, dim));
        let traj = model.rollout_mean(&x, horizon)?;
        for (n, state) in traj.states.iter().enumerate() {
            std::ptr::copy_nonoverlapping(
                state.as_slice().as_ptr(),
                trajectory.add(n * state.len()),
                state.len(),
            );
        }
        Ok(())
    })
}

/// Best-case, posterior-mean, and worst-case accumulated trajectory costs
/// from `x0` over `horizon` steps under the chosen stage cost.
///
/// # Safety
/// `x0` must point to `dim` doubles; `best`, `mean`, and `worst` must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn urf_model_cost_bounds(
    model: *const UrfModelHandle,
    cost: UrfCostKind,
    x0: *const f64,
    dim: size_t,
    horizon: size_t,
    max_iterations: size_t,
    best: *mut f64,
    mean: *mut f64,
    worst: *mut f64,
) -> UrfStatus {
    if model.is_null() {
        return null_arg("model");
    }
    if x0.is_null() {
        return null_arg("x0");
    }
    if best.is_null() || mean.is_null() || worst.is_null() {
        return null_arg("best/mean/worst");
    }
    guarded(|| {
        let model = &(*model).inner;
        let x = DVector::from_column_slice(std::slice::from_raw_parts(x0, dim));
        let cost = match cost {
            UrfCostKind::Quadratic => CostFunction::Quadratic,
            UrfCostKind::PendulumUpright => CostFunction::PendulumUpright,
        };
        let mut config = SolverConfig::new(Direction::Worst, horizon, x);
        if max_iterations > 0 {
            config.max_iterations = max_iterations;
        }
        let (bounds, _, _) = cost_bounds(model, &cost, &config)?;
        *best = bounds.best;
        *mean = bounds.mean;
        *worst = bounds.worst;
        Ok(())
    })
}
