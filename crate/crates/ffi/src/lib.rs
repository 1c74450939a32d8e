//! C interface to the ILV core.
//!
//! Every function returns an [`IlvStatus`]. On failure a message is kept
//! per thread and can be read with [`ilv_last_error`]. Objects cross the
//! boundary as opaque handles that must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ilv_core::behavior::respond;
use ilv_core::geometry::lq_norm;
use ilv_core::{BehaviorModel, IlvConfig, NormOrder, PopulationSpec, Trajectory, UtilityModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IlvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidArgument = 4,
    DimensionMismatch = 5,
    OutOfRange = 6,
    Failed = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IlvBehavior {
    ModelA = 0,
    ModelB = 1,
}

/// A voter utility.
pub struct IlvUtility(UtilityModel);

/// A finished run.
pub struct IlvTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Error(IlvStatus, String);

impl Error {
    fn new(status: IlvStatus, msg: impl ToString) -> Self {
        Error(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> IlvStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Error::new(IlvStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => IlvStatus::Ok,
        Err(Error(status, msg)) => {
            let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
            status
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Error> {
    if p.is_null() {
        Err(Error::new(IlvStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Error> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn json<T: serde::de::DeserializeOwned>(p: *const c_char, what: &str) -> Result<T, Error> {
    non_null(p, what)?;
    let text = CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Error::new(IlvStatus::InvalidUtf8, format!("{what}: {e}")))?;
    serde_json::from_str(text).map_err(|e| Error::new(IlvStatus::InvalidJson, format!("{what}: {e}")))
}

fn norm_order(q: f64) -> Result<NormOrder, Error> {
    NormOrder::from_f64(q).map_err(|e| Error::new(IlvStatus::InvalidArgument, e))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ilv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// ℒq norm of `v[0..n]`. Pass `INFINITY` for the maximum norm.
///
/// # Safety
/// `v` must point to `n` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ilv_lq_norm(v: *const f64, n: usize, q: f64, out: *mut f64) -> IlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = slice(v, n, "v")?;
        *out = lq_norm(v, norm_order(q)?);
        Ok(())
    })
}

/// Builds a utility from its JSON description.
///
/// # Safety
/// `json_text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ilv_utility_from_json(json_text: *const c_char, out: *mut *mut IlvUtility) -> IlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let u: UtilityModel = json(json_text, "utility")?;
        u.validate().map_err(|e| Error::new(IlvStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(IlvUtility(u)));
        Ok(())
    })
}

/// # Safety
/// `u` must come from [`ilv_utility_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ilv_utility_free(u: *mut IlvUtility) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// # Safety
/// `u` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ilv_utility_dim(u: *const IlvUtility, out: *mut usize) -> IlvStatus {
    guard(|| {
        non_null(u, "utility")?;
        non_null(out, "out")?;
        *out = (*u).0.dim();
        Ok(())
    })
}

/// # Safety
/// `u` must be a live handle, `x` must point to `n` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ilv_utility_evaluate(
    u: *const IlvUtility,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> IlvStatus {
    guard(|| {
        non_null(u, "utility")?;
        non_null(out, "out")?;
        let x = slice(x, n, "x")?;
        *out = (*u)
            .0
            .evaluate(x)
            .map_err(|e| Error::new(IlvStatus::DimensionMismatch, e))?;
        Ok(())
    })
}

/// Best response from `x` within the ℒq ball of radius `r`. Writes `n`
/// coordinates to `out_point`; `out_bad_region` may be null.
///
/// # Safety
/// `u` must be a live handle; `x` and `out_point` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilv_utility_best_response(
    u: *const IlvUtility,
    behavior: IlvBehavior,
    x: *const f64,
    n: usize,
    r: f64,
    q: f64,
    out_point: *mut f64,
    out_bad_region: *mut bool,
) -> IlvStatus {
    guard(|| {
        non_null(u, "utility")?;
        non_null(out_point, "out_point")?;
        let x = slice(x, n, "x")?;
        let u = &(*u).0;
        if n != u.dim() {
            return Err(Error::new(
                IlvStatus::DimensionMismatch,
                format!("expected {} coordinates, got {n}", u.dim()),
            ));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::new(IlvStatus::InvalidArgument, format!("radius {r}")));
        }
        let model = match behavior {
            IlvBehavior::ModelA => BehaviorModel::ModelA,
            IlvBehavior::ModelB => BehaviorModel::ModelB,
        };
        let resp = respond(model, u, x, r, norm_order(q)?).map_err(|e| Error::new(IlvStatus::Failed, e))?;
        std::slice::from_raw_parts_mut(out_point, n).copy_from_slice(&resp.new_point);
        if !out_bad_region.is_null() {
            *out_bad_region = resp.bad_region;
        }
        Ok(())
    })
}

/// Runs ILV with an engine configuration and a voter population, both JSON.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ilv_run_from_json(
    config_json: *const c_char,
    population_json: *const c_char,
    out: *mut *mut IlvTrajectory,
) -> IlvStatus {
    guard(|| {
        non_null(out, "out")?;
        let config: IlvConfig = json(config_json, "config")?;
        let population: PopulationSpec = json(population_json, "population")?;
        population
            .validate()
            .map_err(|e| Error::new(IlvStatus::InvalidArgument, e))?;
        let traj = ilv_core::run_ilv(&config, &mut population.stream())
            .map_err(|e| Error::new(IlvStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(IlvTrajectory(traj)));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`ilv_run_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ilv_trajectory_free(t: *mut IlvTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of iterates, the starting point included.
///
/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ilv_trajectory_len(t: *const IlvTrajectory) -> usize {
    if t.is_null() {
        0
    } else {
        (*t).0.iterates.len()
    }
}

/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ilv_trajectory_dim(t: *const IlvTrajectory) -> usize {
    if t.is_null() {
        0
    } else {
        (*t).0.terminal.point().dim()
    }
}

/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ilv_trajectory_converged(t: *const IlvTrajectory) -> bool {
    !t.is_null() && (*t).0.terminal.converged()
}

/// Copies iterate `index` into `out[0..n]`; `out_radius` receives the
/// radius of that update, or 0 for the starting point, and may be null.
///
/// # Safety
/// `t` must be a live handle; `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilv_trajectory_iterate(
    t: *const IlvTrajectory,
    index: usize,
    out: *mut f64,
    n: usize,
    out_radius: *mut f64,
) -> IlvStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        non_null(out, "out")?;
        let iterates = &(*t).0.iterates;
        let it = iterates.get(index).ok_or_else(|| {
            Error::new(IlvStatus::OutOfRange, format!("index {index} of {}", iterates.len()))
        })?;
        if n != it.x.dim() {
            return Err(Error::new(
                IlvStatus::DimensionMismatch,
                format!("expected {} coordinates, got {n}", it.x.dim()),
            ));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&it.x);
        if !out_radius.is_null() {
            *out_radius = it.r.unwrap_or(0.0);
        }
        Ok(())
    })
}

/// Copies the terminal point into `out[0..n]`.
///
/// # Safety
/// `t` must be a live handle; `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilv_trajectory_terminal(t: *const IlvTrajectory, out: *mut f64, n: usize) -> IlvStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        non_null(out, "out")?;
        let x = (*t).0.terminal.point();
        if n != x.dim() {
            return Err(Error::new(
                IlvStatus::DimensionMismatch,
                format!("expected {} coordinates, got {n}", x.dim()),
            ));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(x);
        Ok(())
    })
}
