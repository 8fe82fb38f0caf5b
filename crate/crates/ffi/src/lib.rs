//! C ABI over the `tailwarn` estimators.
//!
//! Series live behind the opaque `TwSeries` handle. Every function returns a
//! `TwStatus`; panics are caught at the boundary and reported as
//! `TW_STATUS_PANIC`. Selector arguments (family, noise, method, boundary,
//! side) are plain integers checked against the `TW_*` constants.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use tailwarn::density::{BinPosition, BoundaryMode, HMinRule};
use tailwarn::dynamics::{minimal_invariant_interval, solve_fold, MapFamily, MapModel, Side};
use tailwarn::estimator::{estimate_lambda, interval_estimate, Basis, EstimatorConfig, EstimatorError};
use tailwarn::noise::{NoiseKind, NoiseModel, RngStream};
use tailwarn::simulate::generate;

pub const TW_FAMILY_LINEAR: u32 = 0;
pub const TW_FAMILY_TANH_SHIFT: u32 = 1;
pub const TW_FAMILY_MODIFIED_TANH: u32 = 2;

pub const TW_NOISE_UNIFORM: u32 = 0;
pub const TW_NOISE_TRUNCATED_NORMAL: u32 = 1;

pub const TW_METHOD_LEADING: u32 = 0;
pub const TW_METHOD_HIGHER: u32 = 1;
pub const TW_METHOD_INTERVAL: u32 = 2;

pub const TW_BOUNDARY_ESTIMATED: u32 = 0;
pub const TW_BOUNDARY_TRUE: u32 = 1;

pub const TW_SIDE_LOWER: u32 = 0;
pub const TW_SIDE_UPPER: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoInterval = 3,
    NoConvergence = 4,
    DegenerateFit = 5,
    EmptyTail = 6,
    Failed = 7,
    Panic = 99,
}

/// Opaque series handle.
pub struct TwSeries {
    values: Vec<f64>,
}

/// Result of [`tw_estimate`]. Fit coefficients are NaN for the interval
/// method.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwEstimate {
    pub lambda_hat: f64,
    pub a1: f64,
    pub a2: f64,
    pub x_hat_minus: f64,
    pub points_used: usize,
}

fn status_of_code(code: &str) -> TwStatus {
    match code {
        "NoInterval" | "NoSignChange" => TwStatus::NoInterval,
        "NoConvergence" | "Diverged" => TwStatus::NoConvergence,
        "DegenerateFit" | "NonNegativeA2" | "CollinearBasis" | "PositiveLog" => TwStatus::DegenerateFit,
        "EmptyTail" | "EmptyInterval" | "EmptyWindow" => TwStatus::EmptyTail,
        "InvalidInput" | "InvalidModel" | "DegenerateRange" | "TooShort" | "NonFinite" => TwStatus::InvalidArgument,
        _ => TwStatus::Failed,
    }
}

fn guard(f: impl FnOnce() -> TwStatus) -> TwStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(TwStatus::Panic)
}

fn family(v: u32) -> Option<MapFamily> {
    match v {
        TW_FAMILY_LINEAR => Some(MapFamily::Linear),
        TW_FAMILY_TANH_SHIFT => Some(MapFamily::TanhShift),
        TW_FAMILY_MODIFIED_TANH => Some(MapFamily::ModifiedTanh),
        _ => None,
    }
}

fn noise(v: u32) -> Option<NoiseKind> {
    match v {
        TW_NOISE_UNIFORM => Some(NoiseKind::Uniform),
        TW_NOISE_TRUNCATED_NORMAL => Some(NoiseKind::TruncatedNormal),
        _ => None,
    }
}

fn side(v: u32) -> Option<Side> {
    match v {
        TW_SIDE_LOWER => Some(Side::Lower),
        TW_SIDE_UPPER => Some(Side::Upper),
        _ => None,
    }
}

/// Static, NUL-terminated description of a status.
#[no_mangle]
pub extern "C" fn tw_status_message(status: TwStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        TwStatus::Ok => b"ok\0",
        TwStatus::NullPointer => b"null pointer argument\0",
        TwStatus::InvalidArgument => b"invalid argument\0",
        TwStatus::NoInterval => b"no invariant interval\0",
        TwStatus::NoConvergence => b"iteration did not converge\0",
        TwStatus::DegenerateFit => b"degenerate tail fit\0",
        TwStatus::EmptyTail => b"no usable tail data\0",
        TwStatus::Failed => b"operation failed\0",
        TwStatus::Panic => b"internal panic\0",
    };
    s.as_ptr() as *const c_char
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies `len` values into a new series.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_series_from_values(values: *const f64, len: usize, out: *mut *mut TwSeries) -> TwStatus {
    guard(|| {
        if out.is_null() || (values.is_null() && len > 0) {
            return TwStatus::NullPointer;
        }
        let v = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(values, len).to_vec() };
        *out = Box::into_raw(Box::new(TwSeries { values: v }));
        TwStatus::Ok
    })
}

/// Simulates `n` iterates after `burn_in` discarded ones from `y0`, using
/// stream `stream` of master seed `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_series_generate(
    family_id: u32,
    a: f64,
    epsilon: f64,
    noise_id: u32,
    y0: f64,
    n: usize,
    burn_in: usize,
    seed: u64,
    stream: u64,
    out: *mut *mut TwSeries,
) -> TwStatus {
    guard(|| {
        if out.is_null() {
            return TwStatus::NullPointer;
        }
        let (Some(fam), Some(kind)) = (family(family_id), noise(noise_id)) else {
            return TwStatus::InvalidArgument;
        };
        let model = match MapModel::new(fam, a, epsilon) {
            Ok(m) => m,
            Err(e) => return status_of_code(e.code()),
        };
        let nm = NoiseModel::for_model(kind, &model);
        let mut rng = RngStream::new(seed, stream);
        match generate(&model, &nm, y0, n, burn_in, &mut rng) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(TwSeries { values: s.values }));
                TwStatus::Ok
            }
            Err(e) => status_of_code(e.code()),
        }
    })
}

/// Number of values in a series; 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tw_series_len(series: *const TwSeries) -> usize {
    if series.is_null() {
        0
    } else {
        (*series).values.len()
    }
}

/// Copies up to `capacity` values into `buffer` and stores the count in
/// `written`.
///
/// # Safety
/// `series` must be a live handle, `buffer` must hold `capacity` doubles and
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_series_copy(
    series: *const TwSeries,
    buffer: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> TwStatus {
    guard(|| {
        if series.is_null() || written.is_null() || (buffer.is_null() && capacity > 0) {
            return TwStatus::NullPointer;
        }
        let v = &(*series).values;
        let k = v.len().min(capacity);
        if k > 0 {
            std::ptr::copy_nonoverlapping(v.as_ptr(), buffer, k);
        }
        *written = k;
        TwStatus::Ok
    })
}

/// Releases a series; null is ignored.
///
/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tw_series_free(series: *mut TwSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Estimates `λ` from a series. `x_minus` is used only with
/// `TW_BOUNDARY_TRUE`; `q` is ignored by the interval method, which uses
/// 100 visits per interval.
///
/// # Safety
/// `series` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tw_estimate(
    series: *const TwSeries,
    method_id: u32,
    b: usize,
    q: f64,
    boundary_id: u32,
    x_minus: f64,
    out: *mut TwEstimate,
) -> TwStatus {
    guard(|| {
        if series.is_null() || out.is_null() {
            return TwStatus::NullPointer;
        }
        let boundary = match boundary_id {
            TW_BOUNDARY_ESTIMATED => BoundaryMode::Estimated,
            TW_BOUNDARY_TRUE if x_minus.is_finite() => BoundaryMode::True(x_minus),
            _ => return TwStatus::InvalidArgument,
        };
        let values = &(*series).values;
        let result: Result<_, EstimatorError> = match method_id {
            TW_METHOD_LEADING | TW_METHOD_HIGHER => {
                let cfg = EstimatorConfig {
                    b,
                    q,
                    h_min: HMinRule::default(),
                    boundary,
                    basis: if method_id == TW_METHOD_LEADING { Basis::LeadingOrder } else { Basis::HigherOrder },
                    position: BinPosition::Midpoint,
                };
                estimate_lambda(values, &cfg)
            }
            TW_METHOD_INTERVAL => interval_estimate(values, b, boundary, 100),
            _ => return TwStatus::InvalidArgument,
        };
        match result {
            Ok(e) => {
                let (a1, a2, used) = e.coefficients.map_or((f64::NAN, f64::NAN, 0), |c| (c.a1, c.a2, c.points_used));
                *out = TwEstimate { lambda_hat: e.lambda_hat, a1, a2, x_hat_minus: e.x_hat_minus, points_used: used };
                TwStatus::Ok
            }
            Err(e) => status_of_code(e.code()),
        }
    })
}

/// Fold of the extremal map on `side`: writes the tangency point and the
/// critical parameter.
///
/// # Safety
/// `x_star` and `a_star` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_fold(
    family_id: u32,
    epsilon: f64,
    side_id: u32,
    x_star: *mut f64,
    a_star: *mut f64,
) -> TwStatus {
    guard(|| {
        if x_star.is_null() || a_star.is_null() {
            return TwStatus::NullPointer;
        }
        let (Some(fam), Some(s)) = (family(family_id), side(side_id)) else {
            return TwStatus::InvalidArgument;
        };
        match solve_fold(fam, epsilon, s) {
            Ok(f) => {
                *x_star = f.x_star;
                *a_star = f.a_star;
                TwStatus::Ok
            }
            Err(e) => status_of_code(e.code()),
        }
    })
}

/// Minimal invariant interval grown from `seed_point` and the slope of the
/// lower extremal map at its left end.
///
/// # Safety
/// The three output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tw_lambda_true(
    family_id: u32,
    a: f64,
    epsilon: f64,
    seed_point: f64,
    x_minus: *mut f64,
    x_plus: *mut f64,
    lambda: *mut f64,
) -> TwStatus {
    guard(|| {
        if x_minus.is_null() || x_plus.is_null() || lambda.is_null() {
            return TwStatus::NullPointer;
        }
        let Some(fam) = family(family_id) else {
            return TwStatus::InvalidArgument;
        };
        let model = match MapModel::new(fam, a, epsilon) {
            Ok(m) => m,
            Err(e) => return status_of_code(e.code()),
        };
        match minimal_invariant_interval(&model, seed_point) {
            Ok(iv) => {
                *x_minus = iv.x_minus;
                *x_plus = iv.x_plus;
                *lambda = tailwarn::dynamics::lambda_true(&model, &iv, Side::Lower);
                TwStatus::Ok
            }
            Err(e) => status_of_code(e.code()),
        }
    })
}
