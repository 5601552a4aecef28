//! C ABI over the tlasso estimators, spillover analysis and range volatility.
//!
//! Every fallible call returns a [`TlStatus`]; on failure the message is
//! available from [`tl_last_error_message`] on the same thread. Matrices are
//! passed as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use tlasso::spillover::{self, SpilloverResult};
use tlasso::study::{self, Estimator};
use tlasso::tlasso::EmConfig;
use tlasso::var::{build_panel, VarModel};
use tlasso::volatility::parkinson_variance;
use tlasso::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    DataError = 4,
    Singular = 5,
    NonStationary = 6,
    Numerical = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlEstimator {
    LeastSquares = 0,
    GaussianLasso = 1,
    TlassoFixed = 2,
    TlassoEstimated = 3,
}

impl From<TlEstimator> for Estimator {
    fn from(e: TlEstimator) -> Self {
        match e {
            TlEstimator::LeastSquares => Estimator::Ls,
            TlEstimator::GaussianLasso => Estimator::GaussianLasso,
            TlEstimator::TlassoFixed => Estimator::TlassoFixed,
            TlEstimator::TlassoEstimated => Estimator::TlassoEstimated,
        }
    }
}

/// Opaque fitted VAR.
pub struct TlFit {
    model: VarModel,
    dof: Option<f64>,
    lambda: Option<f64>,
    gamma: Option<f64>,
}

/// Opaque spillover table.
pub struct TlSpillover {
    result: SpilloverResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> TlStatus {
    match err {
        Error::InsufficientData(_) => TlStatus::InsufficientData,
        Error::Parameter(_) | Error::Domain(_) => TlStatus::InvalidArgument,
        Error::SingularDesign | Error::Singular(_) => TlStatus::Singular,
        Error::NonStationary(_) => TlStatus::NonStationary,
        Error::Numerical(_) => TlStatus::Numerical,
        _ => TlStatus::DataError,
    }
}

struct Failure(TlStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TlStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            TlStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(TlStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn write_matrix(m: &DMatrix<f64>, out: *mut f64, capacity: usize) -> Result<(), Failure> {
    non_null(out, "output buffer")?;
    if capacity < m.len() {
        return Err(Failure(
            TlStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", m.len()),
        ));
    }
    // SAFETY: caller guarantees `out` points to `capacity` writable doubles.
    let dst = unsafe { slice::from_raw_parts_mut(out, m.len()) };
    for (k, v) in dst.iter_mut().enumerate() {
        *v = m[(k / m.ncols(), k % m.ncols())];
    }
    Ok(())
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tl_clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Fits a VAR of the given order to a `rows`×`cols` row-major series,
/// oldest observation first. `dof` is used only by `TlassoFixed`. On success
/// `*out` owns a handle to be released with [`tl_fit_free`].
///
/// # Safety
/// `series` must point to `rows * cols` doubles and `out` to a writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_var(
    series: *const f64,
    rows: usize,
    cols: usize,
    order: usize,
    estimator: TlEstimator,
    dof: f64,
    out: *mut *mut TlFit,
) -> TlStatus {
    guard(|| {
        non_null(series, "series")?;
        non_null(out, "out")?;
        if rows == 0 || cols == 0 {
            return Err(Failure(TlStatus::InvalidArgument, "empty series".into()));
        }
        // SAFETY: caller guarantees `rows * cols` readable doubles.
        let data = unsafe { slice::from_raw_parts(series, rows * cols) };
        let series = DMatrix::from_row_slice(rows, cols, data);
        let panel = build_panel(&series, order, true)?;
        let em = EmConfig::default();
        let fixed = matches!(estimator, TlEstimator::TlassoFixed).then_some(dof);
        let fitted = study::fit_var(&panel, estimator.into(), fixed, &em.regularization, &em)?;
        let handle = Box::new(TlFit {
            model: fitted.model,
            dof: fitted.dof,
            lambda: fitted.lambda,
            gamma: fitted.gamma,
        });
        // SAFETY: `out` checked non-null above.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// Releases a fit handle. Null is ignored.
///
/// # Safety
/// `fit` must come from [`tl_fit_var`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_free(fit: *mut TlFit) {
    if !fit.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(fit) });
    }
}

/// Number of series J, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_dim(fit: *const TlFit) -> usize {
    unsafe { fit.as_ref() }.map_or(0, |f| f.model.dim())
}

/// Lag order P, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_order(fit: *const TlFit) -> usize {
    unsafe { fit.as_ref() }.map_or(0, |f| f.model.order())
}

/// Stacked (J·P)×J coefficients, row-major.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_coefficients(
    fit: *const TlFit,
    out: *mut f64,
    capacity: usize,
) -> TlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let fit = unsafe { &*fit };
        write_matrix(&fit.model.stacked(), out, capacity)
    })
}

/// J×J precision matrix of the innovation scale, row-major.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_precision(
    fit: *const TlFit,
    out: *mut f64,
    capacity: usize,
) -> TlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let fit = unsafe { &*fit };
        write_matrix(fit.model.error().inverse_scale(), out, capacity)
    })
}

/// Degrees of freedom, selected λ and γ. Entries that do not apply to the
/// estimator are set to NaN. Any output pointer may be null.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_fit_parameters(
    fit: *const TlFit,
    dof: *mut f64,
    lambda: *mut f64,
    gamma: *mut f64,
) -> TlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        let fit = unsafe { &*fit };
        for (target, value) in [(dof, fit.dof), (lambda, fit.lambda), (gamma, fit.gamma)] {
            if !target.is_null() {
                unsafe { *target = value.unwrap_or(f64::NAN) };
            }
        }
        Ok(())
    })
}

/// Generalized variance decomposition at `horizon` steps.
///
/// # Safety
/// `fit` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_spillover_new(
    fit: *const TlFit,
    horizon: usize,
    out: *mut *mut TlSpillover,
) -> TlStatus {
    guard(|| {
        non_null(fit, "fit")?;
        non_null(out, "out")?;
        let fit = unsafe { &*fit };
        let result = spillover::gfevd(&fit.model, horizon)?;
        unsafe { *out = Box::into_raw(Box::new(TlSpillover { result })) };
        Ok(())
    })
}

/// Releases a spillover handle. Null is ignored.
///
/// # Safety
/// `spill` must come from [`tl_spillover_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_spillover_free(spill: *mut TlSpillover) {
    if !spill.is_null() {
        drop(unsafe { Box::from_raw(spill) });
    }
}

/// Total spillover index in percent, or NaN for a null handle.
///
/// # Safety
/// `spill` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_spillover_index(spill: *const TlSpillover) -> f64 {
    unsafe { spill.as_ref() }.map_or(f64::NAN, |s| s.result.index)
}

/// True when the fitted model behind the table is not stationary.
///
/// # Safety
/// `spill` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_spillover_non_stationary(spill: *const TlSpillover) -> bool {
    unsafe { spill.as_ref() }.is_some_and(|s| s.result.non_stationary)
}

/// J×J spillovers in percent; row = receiver, column = source.
///
/// # Safety
/// `spill` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tl_spillover_table(
    spill: *const TlSpillover,
    out: *mut f64,
    capacity: usize,
) -> TlStatus {
    guard(|| {
        non_null(spill, "spillover")?;
        let spill = unsafe { &*spill };
        write_matrix(&spill.result.spillovers, out, capacity)
    })
}

/// Parkinson variance of one bar.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_parkinson_variance(
    open: f64,
    high: f64,
    low: f64,
    out: *mut f64,
) -> TlStatus {
    guard(|| {
        non_null(out, "out")?;
        let value = parkinson_variance(open, high, low)?;
        unsafe { *out = value };
        Ok(())
    })
}
