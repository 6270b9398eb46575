//! C ABI over `moe_lab`.
//!
//! Objects cross the boundary as opaque handles created by `moe_*_new` /
//! `moe_*_from_*` and released with the matching `moe_*_free`. Every fallible
//! call returns a [`MoeStatus`]; on failure [`moe_last_error`] describes it.
//! Strings returned by the library are freed with [`moe_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moe_lab::estimation::{fit_em, FitOptions, MleResult};
use moe_lab::model::{log_likelihood, mixture_logpdf, sample_dataset, ContaminatedModel, Dataset};
use moe_lab::ratelab::fit_slope;
use moe_lab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Parse = 4,
    Io = 5,
    Numeric = 6,
    Panic = 7,
}

impl From<&Error> for MoeStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) | Error::Param(_) => MoeStatus::InvalidArgument,
            Error::Shape { .. } => MoeStatus::Shape,
            Error::Parse(_) => MoeStatus::Parse,
            Error::Io(_) => MoeStatus::Io,
            Error::Init(_) | Error::Fit(_) | Error::Diagnostic(_) => MoeStatus::Numeric,
        }
    }
}

/// Opaque model handle.
pub struct MoeModel(ContaminatedModel);

/// Opaque dataset handle.
pub struct MoeDataset(Dataset);

/// Opaque fit result handle.
pub struct MoeFitResult(MleResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: MoeStatus, msg: &str) -> MoeStatus {
    set_error(msg);
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MoeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MoeStatus::Ok
        }
        Ok(Err(Failure(s, m))) => fail(s, &m),
        Err(_) => fail(MoeStatus::Panic, "panic inside moe_lab"),
    }
}

struct Failure(MoeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(MoeStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MoeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(MoeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure(MoeStatus::Parse, "string contains NUL".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn moe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn moe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn moe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a model JSON document `{lambda, base:{kind, expert, a0, b0, nu0}, prompt:{expert, a, b, nu}}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_model_from_json(json: *const c_char, out: *mut *mut MoeModel) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = ContaminatedModel::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(MoeModel(m)));
        Ok(())
    })
}

/// Serializes a model to JSON; free the result with [`moe_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe_model_to_json(model: *const MoeModel, out: *mut *mut c_char) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = to_c_string(handle(model, "model")?.0.to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn moe_model_free(model: *mut MoeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Covariate dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe_model_dim(model: *const MoeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Mixture log-density at one point.
///
/// # Safety
/// `x` must hold `d` doubles; `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_model_logpdf(model: *const MoeModel, x: *const f64, d: usize, y: f64, out: *mut f64) -> MoeStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let x = slice_arg(x, d, "x")?;
        *out_arg(out, "out")? = mixture_logpdf(&m.0, x, y)?;
        Ok(())
    })
}

/// Builds a dataset from row-major `x` (`n × d`) and `y` (`n`).
///
/// # Safety
/// `x` must hold `n·d` doubles and `y` `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_new(x: *const f64, y: *const f64, n: usize, d: usize, out: *mut *mut MoeDataset) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let len = n.checked_mul(d).ok_or_else(|| Failure(MoeStatus::InvalidArgument, "n·d overflows".into()))?;
        let xs = slice_arg(x, len, "x")?.to_vec();
        let ys = slice_arg(y, n, "y")?.to_vec();
        *out = Box::into_raw(Box::new(MoeDataset(Dataset::new(d, xs, ys)?)));
        Ok(())
    })
}

/// Reads a CSV with header `x1..xd,y`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_load_csv(path: *const c_char, out: *mut *mut MoeDataset) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        *out = Box::into_raw(Box::new(MoeDataset(Dataset::load_csv(str_arg(path, "path")?)?)));
        Ok(())
    })
}

/// # Safety
/// `data` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_save_csv(data: *const MoeDataset, path: *const c_char) -> MoeStatus {
    guard(|| {
        handle(data, "data")?.0.save_csv(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_len(data: *const MoeDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Covariate dimension, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_dim(data: *const MoeDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.dim())
}

/// Copies row `i` into `x` (`d` doubles) and its response into `y`.
///
/// # Safety
/// `x` must have room for `d` doubles; `y` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_row(data: *const MoeDataset, i: usize, x: *mut f64, d: usize, y: *mut f64) -> MoeStatus {
    guard(|| {
        let data = &handle(data, "data")?.0;
        if i >= data.len() {
            return Err(Failure(MoeStatus::InvalidArgument, format!("row {i} out of range")));
        }
        if d != data.dim() {
            return Err(Error::Shape { expected: data.dim(), got: d }.into());
        }
        if x.is_null() {
            return Err(null("x"));
        }
        std::slice::from_raw_parts_mut(x, d).copy_from_slice(data.row(i));
        *out_arg(y, "y")? = data.y()[i];
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn moe_dataset_free(data: *mut MoeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Draws `n` rows from `model` with a ChaCha8 stream seeded by `seed`.
///
/// # Safety
/// `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_sample(model: *const MoeModel, n: usize, seed: u64, out: *mut *mut MoeDataset) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = handle(model, "model")?;
        let d = sample_dataset(&m.0, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
        *out = Box::into_raw(Box::new(MoeDataset(d)));
        Ok(())
    })
}

/// Total log-likelihood of `data` under `model`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_log_likelihood(model: *const MoeModel, data: *const MoeDataset, out: *mut f64) -> MoeStatus {
    guard(|| {
        let ll = log_likelihood(&handle(model, "model")?.0, &handle(data, "data")?.0)?;
        *out_arg(out, "out")? = ll.value;
        Ok(())
    })
}

/// Fits `(λ, G)` by EM. The frozen component and experts come from `model`,
/// whose `λ` and prompt also centre the default near-truth initialization.
/// `options_json` may be null for defaults.
///
/// # Safety
/// Handles must be live; `options_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_fit(
    model: *const MoeModel,
    data: *const MoeDataset,
    options_json: *const c_char,
    seed: u64,
    out: *mut *mut MoeFitResult,
) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = &handle(model, "model")?.0;
        let data = &handle(data, "data")?.0;
        let opts: FitOptions = if options_json.is_null() {
            FitOptions::default()
        } else {
            let s = str_arg(options_json, "options_json")?;
            serde_json::from_str(s).map_err(Error::from)?
        };
        let r = fit_em(m.base, &m.g0, m.sigma, data, Some((m.lambda, &m.prompt)), &opts, &mut ChaCha8Rng::seed_from_u64(seed))?;
        *out = Box::into_raw(Box::new(MoeFitResult(r)));
        Ok(())
    })
}

/// Fitted mixing proportion, log-likelihood, iteration count and convergence flag.
/// Any output pointer may be null.
///
/// # Safety
/// `result` must be live.
#[no_mangle]
pub unsafe extern "C" fn moe_fit_result_summary(
    result: *const MoeFitResult,
    lambda: *mut f64,
    loglik: *mut f64,
    iters: *mut usize,
    converged: *mut bool,
) -> MoeStatus {
    guard(|| {
        let r = &handle(result, "result")?.0;
        if let Some(p) = lambda.as_mut() {
            *p = r.lambda_hat;
        }
        if let Some(p) = loglik.as_mut() {
            *p = r.final_loglik;
        }
        if let Some(p) = iters.as_mut() {
            *p = r.iters;
        }
        if let Some(p) = converged.as_mut() {
            *p = r.converged;
        }
        Ok(())
    })
}

/// Copies the fitted prompt `(a, b, ν)`; `a` must hold `d` doubles.
///
/// # Safety
/// `result` live; `a` has room for `d` doubles; `b`, `nu` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_fit_result_prompt(result: *const MoeFitResult, a: *mut f64, d: usize, b: *mut f64, nu: *mut f64) -> MoeStatus {
    guard(|| {
        let g = &handle(result, "result")?.0.g_hat;
        if d != g.dim() {
            return Err(Error::Shape { expected: g.dim(), got: d }.into());
        }
        if a.is_null() {
            return Err(null("a"));
        }
        std::slice::from_raw_parts_mut(a, d).copy_from_slice(&g.a);
        *out_arg(b, "b")? = g.b;
        *out_arg(nu, "nu")? = g.nu;
        Ok(())
    })
}

/// Full result as JSON; free with [`moe_string_free`].
///
/// # Safety
/// `result` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn moe_fit_result_to_json(result: *const MoeFitResult, out: *mut *mut c_char) -> MoeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = serde_json::to_string(&handle(result, "result")?.0).map_err(Error::from)?;
        *out = to_c_string(s)?;
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn moe_fit_result_free(result: *mut MoeFitResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Least-squares slope of `log err` on `log n` over the finite positive points.
///
/// # Safety
/// `n` and `err` must hold `len` doubles; outputs writable (r2 may be null).
#[no_mangle]
pub unsafe extern "C" fn moe_fit_slope(n: *const f64, err: *const f64, len: usize, slope: *mut f64, intercept: *mut f64, r2: *mut f64) -> MoeStatus {
    guard(|| {
        let ns = slice_arg(n, len, "n")?;
        let es = slice_arg(err, len, "err")?;
        let pts: Vec<(f64, f64)> = ns.iter().copied().zip(es.iter().copied()).collect();
        let f = fit_slope(&pts)?;
        *out_arg(slope, "slope")? = f.slope;
        *out_arg(intercept, "intercept")? = f.intercept;
        if let Some(p) = r2.as_mut() {
            *p = f.r2;
        }
        Ok(())
    })
}
