//! C ABI over `removability-core`.
//!
//! Parameters live behind an opaque [`RmParams`] handle created by
//! [`rm_params_new`] or [`rm_solve`] and released with [`rm_params_free`].
//! Every function returns an [`RmStatus`]; on failure the message is kept per
//! thread and can be copied out with [`rm_last_error_message`]. Panics never
//! cross the boundary: they are reported as [`RmStatus::Panic`].
//!
//! Exact values travel as NUL-terminated `num/den` strings.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use removability::criterion::{self, ModulusOfContinuity};
use removability::exact::{self, ExactScalar};
use removability::tower::{self, ConstructionParams};
use removability::verifier::Verdict;
use removability::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Range = 3,
    Infeasible = 4,
    CapExceeded = 5,
    Mismatch = 6,
    Format = 7,
    Io = 8,
    Numeric = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmVerdict {
    Converges = 0,
    Diverges = 1,
    Inconclusive = 2,
}

/// Opaque construction parameters.
pub struct RmParams {
    inner: ConstructionParams,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(err: &Error) -> RmStatus {
    match err {
        Error::Domain(_) => RmStatus::Domain,
        Error::Range(_) => RmStatus::Range,
        Error::Infeasible { .. } => RmStatus::Infeasible,
        Error::CapExceeded { .. } => RmStatus::CapExceeded,
        Error::Mismatch(_) => RmStatus::Mismatch,
        Error::Format(_) => RmStatus::Format,
        Error::Io(_) => RmStatus::Io,
        Error::InsufficientSamples(_) | Error::Degenerate(_) | Error::Resolution(_) => RmStatus::Numeric,
    }
}

struct Failure(RmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {message}"));
            RmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(RmStatus::Format, format!("{what} is not UTF-8")))
}

unsafe fn read_exact(ptr: *const c_char, what: &str) -> Result<ExactScalar, Failure> {
    Ok(exact::parse(read_str(ptr, what)?)?)
}

unsafe fn params<'a>(handle: *const RmParams) -> Result<&'a ConstructionParams, Failure> {
    handle.as_ref().map(|h| &h.inner).ok_or_else(|| null("params handle"))
}

unsafe fn store_handle(out: *mut *mut RmParams, inner: ConstructionParams) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(RmParams { inner }));
    Ok(())
}

/// Copies `text` plus a NUL into `buf`. `needed` (if non-null) always
/// receives the required size including the NUL.
unsafe fn write_string(text: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let size = text.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if buf.is_null() || len < size {
        return Err(Failure(
            RmStatus::BufferTooSmall,
            format!("buffer of {len} bytes, {size} needed"),
        ));
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Parameters for M = 2^a, N = 2^b with p = 2 and the largest exponent the
/// pair supports.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rm_params_new(a: u32, b: u32, max_depth: usize, out: *mut *mut RmParams) -> RmStatus {
    guard(|| store_handle(out, ConstructionParams::with_exponents(a, b, max_depth)?))
}

/// Smallest feasible (a, b) for `alpha` and `p`, given as decimal or
/// `num/den` strings.
///
/// # Safety
/// `alpha` and `p` must be NUL-terminated strings; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn rm_solve(
    alpha: *const c_char,
    p: *const c_char,
    bound: u32,
    max_depth: usize,
    out: *mut *mut RmParams,
) -> RmStatus {
    guard(|| {
        let alpha = read_exact(alpha, "alpha")?;
        let p = read_exact(p, "p")?;
        let inner = tower::solve_parameters(&alpha, &p, bound)?.with_max_depth(max_depth)?;
        store_handle(out, inner)
    })
}

/// # Safety
/// `handle` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn rm_params_free(handle: *mut RmParams) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live handle; `a` and `b` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rm_params_exponents(handle: *const RmParams, a: *mut u32, b: *mut u32) -> RmStatus {
    guard(|| {
        let p = params(handle)?;
        if a.is_null() || b.is_null() {
            return Err(null("exponent output"));
        }
        *a = p.a();
        *b = p.b();
        Ok(())
    })
}

/// uₙ(x, y) for `f64` inputs, each read as the exact rational it encodes.
///
/// # Safety
/// `handle` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rm_u_eval(handle: *const RmParams, n: usize, x: f64, y: f64, out: *mut f64) -> RmStatus {
    guard(|| {
        let p = params(handle)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let u = tower::u_eval(p, n, &exact::from_f64(x)?, &exact::from_f64(y)?)?;
        *out = exact::to_f64(&u);
        Ok(())
    })
}

/// Exact uₙ(x, y): rational string inputs, `num/den` output written into
/// `buf`. On `BufferTooSmall`, `needed` holds the required size.
///
/// # Safety
/// `handle` must be a live handle; `x` and `y` NUL-terminated strings; `buf`
/// valid for `len` bytes; `needed` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rm_u_eval_exact(
    handle: *const RmParams,
    n: usize,
    x: *const c_char,
    y: *const c_char,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RmStatus {
    guard(|| {
        let p = params(handle)?;
        let u = tower::u_eval(p, n, &read_exact(x, "x")?, &read_exact(y, "y")?)?;
        write_string(&exact::to_fraction_string(&u), buf, len, needed)
    })
}

/// Integral test for h(t) = c·t^alpha. `value` receives the integral when it
/// converges and NaN otherwise.
///
/// # Safety
/// `verdict` and `value` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rm_integral_test(
    c: f64,
    alpha: f64,
    p: f64,
    verdict: *mut RmVerdict,
    value: *mut f64,
) -> RmStatus {
    guard(|| {
        if verdict.is_null() || value.is_null() {
            return Err(null("output pointer"));
        }
        let h = ModulusOfContinuity::power_law(c, alpha)?;
        let report = criterion::integral_test(&h, p)?;
        *verdict = match report.verdict {
            Verdict::Converges => RmVerdict::Converges,
            Verdict::Diverges => RmVerdict::Diverges,
            Verdict::Inconclusive => RmVerdict::Inconclusive,
        };
        *value = report.value.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Size in bytes, including the NUL, of the calling thread's last error
/// message; 1 when the last call succeeded.
#[no_mangle]
pub extern "C" fn rm_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len() + 1)
}

/// Copies the calling thread's last error message into `buf`. Returns the
/// number of bytes written including the NUL, or 0 if `buf` is null or too
/// small.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn rm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let message = e.borrow();
        let size = message.len() + 1;
        if buf.is_null() || len < size {
            return 0;
        }
        std::ptr::copy_nonoverlapping(message.as_ptr(), buf as *mut u8, message.len());
        *buf.add(message.len()) = 0;
        size
    })
}
