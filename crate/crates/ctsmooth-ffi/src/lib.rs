//! C ABI for the estimation library: opaque handles, integer status codes,
//! and a thread-local error message. Matrices cross the boundary as
//! row-major `double` buffers. Every pointer argument is checked for null;
//! panics are caught and reported as [`CtsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};

use nalgebra::{DMatrix, DVector};

use ctsmooth::Error;
use ctsmooth::analysis::snr;
use ctsmooth::messages::MomentGaussian;
use ctsmooth::model::{ContinuousLTISystem, butterworth};
use ctsmooth::smoother::{MeasurementSet, SmootherState};

/// Result of every fallible call. On anything but `Ok`, a human-readable
/// reason is available from [`cts_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Unsupported = 3,
    Failure = 4,
    Panic = 5,
}

/// Opaque handle to a continuous-time model.
pub struct CtsModel {
    inner: ContinuousLTISystem,
}

/// Opaque handle to a completed smoothing pass, ready for queries.
pub struct CtsSmoother {
    inner: SmootherState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn fail(err: &Error) -> CtsStatus {
    set_error(&err.to_string());
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::Usage(_) => CtsStatus::InvalidInput,
        Error::Unsupported(_) | Error::ExactObservation | Error::SizeGuard { .. } => {
            CtsStatus::Unsupported
        }
        _ => CtsStatus::Failure,
    }
}

fn null_pointer(what: &str) -> CtsStatus {
    set_error(&format!("{what} must not be null"));
    CtsStatus::NullPointer
}

fn guard(f: impl FnOnce() -> CtsStatus) -> CtsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CtsStatus::Panic
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn cts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a unit-DC-gain lowpass model of the given order and cutoff,
/// driven at level `sigma_u` and observed with noise deviation `sigma_z`.
/// On success writes a handle to `out`; release it with [`cts_model_free`].
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_model_butterworth(
    order: usize,
    fc_hz: f64,
    sigma_u: f64,
    sigma_z: f64,
    out: *mut *mut CtsModel,
) -> CtsStatus {
    guard(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        match butterworth(order, fc_hz, sigma_u, sigma_z) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(CtsModel { inner })) };
                CtsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Builds a model dX = (A X + h)dt + B dU, Y = C X from row-major buffers:
/// `a` is n*n, `b` is n*m, `c` is p*n, `h` is n (or null for zero), and
/// `vz` holds the p per-channel observation noise variances.
///
/// # Safety
/// The matrix buffers must be readable for the lengths stated above, and
/// `out` must be valid for writing one pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_model_new(
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    h: *const f64,
    sigma_u: f64,
    vz: *const f64,
    out: *mut *mut CtsModel,
) -> CtsStatus {
    guard(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        if a.is_null() || b.is_null() || c.is_null() || vz.is_null() {
            return null_pointer("a, b, c, and vz");
        }
        if state_dim == 0 || input_dim == 0 || output_dim == 0 {
            set_error("dimensions must be positive");
            return CtsStatus::InvalidInput;
        }
        let (n, m, p) = (state_dim, input_dim, output_dim);
        let a = DMatrix::from_row_slice(n, n, unsafe { std::slice::from_raw_parts(a, n * n) });
        let b = DMatrix::from_row_slice(n, m, unsafe { std::slice::from_raw_parts(b, n * m) });
        let c = DMatrix::from_row_slice(p, n, unsafe { std::slice::from_raw_parts(c, p * n) });
        let h = if h.is_null() {
            DVector::zeros(n)
        } else {
            DVector::from_column_slice(unsafe { std::slice::from_raw_parts(h, n) })
        };
        let vz = DVector::from_column_slice(unsafe { std::slice::from_raw_parts(vz, p) });
        match ContinuousLTISystem::new(a, b, c, h, sigma_u, vz) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(CtsModel { inner })) };
                CtsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a model handle. Null is accepted and ignored.
///
/// # Safety
/// `model` must be null or a handle from a `cts_model_*` constructor that
/// has not been freed already.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_model_free(model: *mut CtsModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Writes the state, input, and output dimensions of the model.
///
/// # Safety
/// `model` must be a live model handle; non-null outputs must each be
/// valid for writing one `size_t`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_model_dims(
    model: *const CtsModel,
    state_dim: *mut usize,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> CtsStatus {
    guard(|| {
        if model.is_null() {
            return null_pointer("model");
        }
        let sys = unsafe { &(*model).inner };
        if !state_dim.is_null() {
            unsafe { *state_dim = sys.state_dim() };
        }
        if !input_dim.is_null() {
            unsafe { *input_dim = sys.input_dim() };
        }
        if !output_dim.is_null() {
            unsafe { *output_dim = sys.output_dim() };
        }
        CtsStatus::Ok
    })
}

/// Stationary output power and observation SNR of a scalar-output model.
/// Pass a positive `fc_hz` to also get the rate-normalized constant
/// E[Y^2]/(sigma_u^2 fc); otherwise `snr_constant` receives NaN. Output
/// pointers may be null when the value is not wanted.
///
/// # Safety
/// `model` must be a live model handle; non-null outputs must each be
/// valid for writing one `double`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_snr(
    model: *const CtsModel,
    fc_hz: f64,
    ey2: *mut f64,
    snr_db: *mut f64,
    snr_constant: *mut f64,
) -> CtsStatus {
    guard(|| {
        if model.is_null() {
            return null_pointer("model");
        }
        let fc = (fc_hz.is_finite() && fc_hz > 0.0).then_some(fc_hz);
        match snr(unsafe { &(*model).inner }, fc) {
            Ok(report) => {
                if !ey2.is_null() {
                    unsafe { *ey2 = report.ey2 };
                }
                if !snr_db.is_null() {
                    unsafe { *snr_db = report.snr_db };
                }
                if !snr_constant.is_null() {
                    unsafe { *snr_constant = report.snr_constant.unwrap_or(f64::NAN) };
                }
                CtsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the forward-backward sweep over `count` samples. `times` must be
/// strictly increasing and start after `t0`; `values` is row-major
/// `count * output_dim`. `t_end` extends the estimation range beyond the
/// last sample (pass NaN for the default). A prior at `t0` can be supplied
/// as `prior_mean` (n) and `prior_cov` (n*n row-major); pass null for the
/// stationary prior, which requires a stable model. On success writes a
/// handle to `out`; release it with [`cts_smoother_free`].
///
/// # Safety
/// `model` must be a live model handle; `times`, `values`, and the prior
/// buffers must be readable for the lengths stated above; `out` must be
/// valid for writing one pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_smoother_run(
    model: *const CtsModel,
    times: *const f64,
    values: *const f64,
    count: usize,
    t0: f64,
    t_end: f64,
    prior_mean: *const f64,
    prior_cov: *const f64,
    out: *mut *mut CtsSmoother,
) -> CtsStatus {
    guard(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        if model.is_null() {
            return null_pointer("model");
        }
        if count > 0 && (times.is_null() || values.is_null()) {
            return null_pointer("times and values");
        }
        let sys = unsafe { &(*model).inner };
        let n = sys.state_dim();
        let p = sys.output_dim();
        let times = if count == 0 {
            Vec::new()
        } else {
            unsafe { std::slice::from_raw_parts(times, count) }.to_vec()
        };
        let rows = if count == 0 {
            Vec::new()
        } else {
            unsafe { std::slice::from_raw_parts(values, count * p) }
                .chunks(p)
                .map(DVector::from_column_slice)
                .collect()
        };
        let meas = match MeasurementSet::new(times, rows, None) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let prior = match (prior_mean.is_null(), prior_cov.is_null()) {
            (true, true) => None,
            (false, false) => {
                let mean =
                    DVector::from_column_slice(unsafe { std::slice::from_raw_parts(prior_mean, n) });
                let cov = DMatrix::from_row_slice(n, n, unsafe {
                    std::slice::from_raw_parts(prior_cov, n * n)
                });
                match MomentGaussian::new(mean, cov) {
                    Ok(p) => Some(p),
                    Err(e) => return fail(&e),
                }
            }
            _ => {
                set_error("prior_mean and prior_cov must be given together");
                return CtsStatus::InvalidInput;
            }
        };
        let t_end = t_end.is_finite().then_some(t_end);
        match SmootherState::run(sys, &meas, prior, t0, t_end) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(CtsSmoother { inner })) };
                CtsStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Posterior at time `t` inside the estimation range. Non-null outputs are
/// filled: `x_mean` (n), `x_cov` (n*n row-major), `y_hat` (p), `y_var`
/// (p*p row-major), `u_hat` (m).
///
/// # Safety
/// `smoother` must be a live smoother handle; non-null outputs must be
/// writable for the lengths stated above.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_smoother_query(
    smoother: *const CtsSmoother,
    t: f64,
    x_mean: *mut f64,
    x_cov: *mut f64,
    y_hat: *mut f64,
    y_var: *mut f64,
    u_hat: *mut f64,
) -> CtsStatus {
    guard(|| {
        if smoother.is_null() {
            return null_pointer("smoother");
        }
        let rec = match unsafe { &(*smoother).inner }.query(t) {
            Ok(rec) => rec,
            Err(e) => return fail(&e),
        };
        unsafe {
            if !x_mean.is_null() {
                std::ptr::copy_nonoverlapping(rec.x_mean.as_ptr(), x_mean, rec.x_mean.len());
            }
            if !x_cov.is_null() {
                let n = rec.x_mean.len();
                for i in 0..n {
                    for j in 0..n {
                        *x_cov.add(i * n + j) = rec.x_cov[(i, j)];
                    }
                }
            }
            if !y_hat.is_null() {
                std::ptr::copy_nonoverlapping(rec.y_hat.as_ptr(), y_hat, rec.y_hat.len());
            }
            if !y_var.is_null() {
                let p = rec.y_hat.len();
                for i in 0..p {
                    for j in 0..p {
                        *y_var.add(i * p + j) = rec.y_var[(i, j)];
                    }
                }
            }
            if !u_hat.is_null() {
                std::ptr::copy_nonoverlapping(rec.u_hat.as_ptr(), u_hat, rec.u_hat.len());
            }
        }
        CtsStatus::Ok
    })
}

/// Releases a smoother handle. Null is accepted and ignored.
///
/// # Safety
/// `smoother` must be null or a handle from [`cts_smoother_run`] that has
/// not been freed already.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn cts_smoother_free(smoother: *mut CtsSmoother) {
    if !smoother.is_null() {
        drop(unsafe { Box::from_raw(smoother) });
    }
}
