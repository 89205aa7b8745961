//! C ABI for kriglab.
//!
//! Models are opaque `KkModel` handles created by `kk_model_fit_ok` and released
//! with `kk_model_free`. Every fallible call returns a `KkStatus`; the message of
//! the last failure on the calling thread is available from
//! `kk_last_error_message`. Arrays are row-major `double` buffers in raw units.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kriglab::benchfns;
use kriglab::designspace::{Dataset, Domain};
use kriglab::dynamics::DynamicsProblem;
use kriglab::gpcore::{fit_ok, FitConfig, FittedModel};
use kriglab::optim::PsoConfig;
use kriglab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    DuplicatePoint = 4,
    NotPositiveDefinite = 5,
    UnknownName = 6,
    OutOfDomain = 7,
    Numerical = 8,
    Panic = 99,
}

/// Opaque fitted model.
pub struct KkModel {
    inner: FittedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> KkStatus {
    match e {
        Error::DimensionMismatch { .. } => KkStatus::DimensionMismatch,
        Error::DuplicatePoint(_) => KkStatus::DuplicatePoint,
        Error::NotPositiveDefinite { .. } | Error::SingularBlock(_) => {
            KkStatus::NotPositiveDefinite
        }
        Error::UnknownName(_) => KkStatus::UnknownName,
        Error::OutOfDomain(_) => KkStatus::OutOfDomain,
        Error::StepSizeUnderflow(..) | Error::NonFiniteTrajectory(_) => KkStatus::Numerical,
        _ => KkStatus::InvalidArgument,
    }
}

struct Fail(KkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(KkStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> KkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KkStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            KkStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn name<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("name"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(KkStatus::InvalidArgument, "name is not UTF-8".into()))
}

/// Fit ordinary Kriging (Matérn 3/2) to `m` points of dimension `n`.
///
/// `x` holds `m * n` values, `y` holds `m`, `lower`/`upper` hold `n` bounds.
/// On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// All pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kk_model_fit_ok(
    x: *const f64,
    y: *const f64,
    m: usize,
    n: usize,
    lower: *const f64,
    upper: *const f64,
    seed: u64,
    out: *mut *mut KkModel,
) -> KkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if m == 0 || n == 0 {
            return Err(Fail(
                KkStatus::InvalidArgument,
                "m and n must be positive".into(),
            ));
        }
        let xs = slice(x, m * n, "x")?;
        let ys = slice(y, m, "y")?;
        let lo = slice(lower, n, "lower")?;
        let hi = slice(upper, n, "upper")?;
        let domain = Domain::new(lo.to_vec(), hi.to_vec())?;
        let raw: Vec<Vec<f64>> = xs.chunks(n).map(|r| r.to_vec()).collect();
        let ds = Dataset::from_raw(&raw, ys.to_vec(), domain)?;
        let cfg = FitConfig {
            pso: PsoConfig::default().with_seed(seed),
            ..FitConfig::default()
        };
        let model = fit_ok(ds, &cfg)?;
        *out = Box::into_raw(Box::new(KkModel { inner: model }));
        Ok(())
    })
}

/// Predict at `k` raw points (`k * n` values). `var_out` may be null.
///
/// # Safety
/// `model` must come from `kk_model_fit_ok`; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn kk_model_predict(
    model: *const KkModel,
    x: *const f64,
    k: usize,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> KkStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let n = model.inner.dim();
        let xs = slice(x, k * n, "x")?;
        let means = slice_mut(mean_out, k, "mean_out")?;
        let mut vars = if var_out.is_null() {
            None
        } else {
            Some(slice_mut(var_out, k, "var_out")?)
        };
        for (i, row) in xs.chunks(n).enumerate() {
            let p = model.inner.predict_raw(row)?;
            means[i] = p.mean;
            if let Some(v) = vars.as_deref_mut() {
                v[i] = p.variance;
            }
        }
        Ok(())
    })
}

/// Closed-form leave-one-out means and variances, `m` values each. `var_out` may be null.
///
/// # Safety
/// `model` must come from `kk_model_fit_ok`; buffers must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn kk_model_loo(
    model: *const KkModel,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> KkStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let m = model.inner.m();
        let loo = model.inner.loo_dubrule()?;
        slice_mut(mean_out, m, "mean_out")?.copy_from_slice(&loo.means);
        if !var_out.is_null() {
            slice_mut(var_out, m, "var_out")?.copy_from_slice(&loo.variances);
        }
        Ok(())
    })
}

/// Sample count and input dimension.
///
/// # Safety
/// `model` must come from `kk_model_fit_ok`; outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn kk_model_shape(
    model: *const KkModel,
    m_out: *mut usize,
    n_out: *mut usize,
) -> KkStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if let Some(m) = m_out.as_mut() {
            *m = model.inner.m();
        }
        if let Some(n) = n_out.as_mut() {
            *n = model.inner.dim();
        }
        Ok(())
    })
}

/// Fitted length-scale parameters, `n` values.
///
/// # Safety
/// `model` must come from `kk_model_fit_ok`; `theta_out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn kk_model_theta(model: *const KkModel, theta_out: *mut f64) -> KkStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let t = &model.inner.theta;
        slice_mut(theta_out, t.len(), "theta_out")?.copy_from_slice(t);
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from `kk_model_fit_ok` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kk_model_free(model: *mut KkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension of a named benchmark or oscillator problem.
///
/// # Safety
/// `problem` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kk_problem_dim(problem: *const c_char, out: *mut usize) -> KkStatus {
    guard(|| {
        let name = name(problem)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match benchfns::problem(name) {
            Ok(p) => p.dim(),
            Err(_) => DynamicsProblem::by_name(name)?.axes.len(),
        };
        Ok(())
    })
}

/// Evaluate a named benchmark function at a raw point of length `n`.
///
/// # Safety
/// `problem` must be NUL-terminated; `x` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kk_benchmark_eval(
    problem: *const c_char,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> KkStatus {
    guard(|| {
        let p = benchfns::problem(name(problem)?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = p.evaluate(slice(x, n, "x")?)?;
        Ok(())
    })
}

/// Evaluate an oscillator indicator (LLE or sticking time) at a raw parameter point.
///
/// # Safety
/// `problem` must be NUL-terminated; `x` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kk_dynamics_eval(
    problem: *const c_char,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> KkStatus {
    guard(|| {
        let p = DynamicsProblem::by_name(name(problem)?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = p.evaluate(slice(x, n, "x")?)?;
        Ok(())
    })
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must hold `len` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn kk_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let k = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, k);
            *buf.add(k) = 0;
        }
        msg.len()
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn kk_status_string(status: KkStatus) -> *const c_char {
    let s: &'static CStr = match status {
        KkStatus::Ok => c"ok",
        KkStatus::NullPointer => c"null pointer",
        KkStatus::InvalidArgument => c"invalid argument",
        KkStatus::DimensionMismatch => c"dimension mismatch",
        KkStatus::DuplicatePoint => c"duplicate point",
        KkStatus::NotPositiveDefinite => c"matrix not positive definite",
        KkStatus::UnknownName => c"unknown name",
        KkStatus::OutOfDomain => c"point outside the domain",
        KkStatus::Numerical => c"numerical failure",
        KkStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}
