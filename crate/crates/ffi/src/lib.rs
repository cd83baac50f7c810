//! C ABI over the gaugelab library.
//!
//! Every fallible function returns a [`GaugelabStatus`]; on failure the
//! message is available from [`gaugelab_last_error`] on the same thread.
//! Models are opaque [`GaugelabModel`] handles released with
//! [`gaugelab_model_free`]. Strings returned by the library are released with
//! [`gaugelab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use gaugelab::experiments::{run_experiment, ExperimentConfig};
use gaugelab::models::{build_model, Batch, Model, ModelKind, Params};
use gaugelab::symmetry::{gauge_correction, orbit_gram, GaugeMap};
use gaugelab::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    UnknownName = 4,
    OrbitDegenerate = 5,
    NonTransversal = 6,
    SingularGram = 7,
    Divergence = 8,
    NoConvergence = 9,
    Unsupported = 10,
    Io = 11,
    Panic = 12,
}

/// Opaque model handle.
pub struct GaugelabModel {
    inner: Box<dyn Model>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> GaugelabStatus {
    match err {
        Error::DimensionMismatch { .. } | Error::GeneratorIndex { .. } => GaugelabStatus::DimensionMismatch,
        Error::OrbitDegenerate { .. } => GaugelabStatus::OrbitDegenerate,
        Error::NonTransversal { .. } => GaugelabStatus::NonTransversal,
        Error::SingularGram { .. } => GaugelabStatus::SingularGram,
        Error::NonFiniteGradient { .. } | Error::Divergence { .. } => GaugelabStatus::Divergence,
        Error::NoConvergence(_) => GaugelabStatus::NoConvergence,
        Error::UnknownExperiment(_) | Error::UnknownModelKind(_) => GaugelabStatus::UnknownName,
        Error::Unsupported(_) => GaugelabStatus::Unsupported,
        Error::Io { .. } | Error::Csv(_) => GaugelabStatus::Io,
        Error::InsufficientData(_) | Error::InvalidArgument(_) | Error::Config(_) | Error::Json(_) => {
            GaugelabStatus::InvalidArgument
        }
    }
}

struct Fail(GaugelabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GaugelabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GaugelabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            GaugelabStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(GaugelabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(m: *const GaugelabModel) -> Result<&'a GaugelabModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(GaugelabStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn check_len(expected: usize, got: usize) -> Result<(), Fail> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got }.into())
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gaugelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gaugelab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a catalog model.
///
/// `params_json` is a JSON object of model parameters, or null for defaults.
///
/// # Safety
/// `kind` must be a NUL-terminated string, `params_json` null or
/// NUL-terminated, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_new(
    kind: *const c_char,
    params_json: *const c_char,
    seed: u64,
    out: *mut *mut GaugelabModel,
) -> GaugelabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: ModelKind = c_str(kind, "kind")?.parse()?;
        let params: Params = if params_json.is_null() {
            Params::new()
        } else {
            serde_json::from_str(c_str(params_json, "params_json")?).map_err(Error::from)?
        };
        let (inner, _) = build_model(kind, &params, seed)?;
        out.write(Box::into_raw(Box::new(GaugelabModel { inner })));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`gaugelab_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_free(model: *mut GaugelabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_param_dim(model: *const GaugelabModel, out: *mut usize) -> GaugelabStatus {
    guard(|| write_out(out, model_ref(model)?.inner.param_dim(), "out"))
}

/// Number of symmetry generators.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_generator_count(
    model: *const GaugelabModel,
    out: *mut usize,
) -> GaugelabStatus {
    guard(|| write_out(out, model_ref(model)?.inner.generators().count(), "out"))
}

/// Seeded initial parameters; `len` must equal the parameter dimension.
///
/// # Safety
/// `theta_out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_init(
    model: *const GaugelabModel,
    theta_out: *mut f64,
    len: usize,
) -> GaugelabStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        check_len(m.param_dim(), len)?;
        out_slice(theta_out, len, "theta_out")?.copy_from_slice(&m.init());
        Ok(())
    })
}

/// Full-batch training loss.
///
/// # Safety
/// `theta` must point to `len` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_loss(
    model: *const GaugelabModel,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> GaugelabStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        check_len(m.param_dim(), len)?;
        let theta = in_slice(theta, len, "theta")?;
        write_out(out, m.loss(theta, Batch::Full), "out")
    })
}

/// Full-batch gradient into `grad_out` (same length as `theta`); the loss is
/// written to `loss_out` unless it is null.
///
/// # Safety
/// `theta` and `grad_out` must point to `len` doubles; `loss_out` must be
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_grad(
    model: *const GaugelabModel,
    theta: *const f64,
    len: usize,
    grad_out: *mut f64,
    loss_out: *mut f64,
) -> GaugelabStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        check_len(m.param_dim(), len)?;
        let theta = in_slice(theta, len, "theta")?;
        let (loss, g) = m.loss_grad(theta, Batch::Full);
        out_slice(grad_out, len, "grad_out")?.copy_from_slice(&g);
        if !loss_out.is_null() {
            loss_out.write(loss);
        }
        Ok(())
    })
}

/// Orbit Gram matrix `H_ab = <xi_a, xi_b>`, row-major, `out_len = m * m`.
///
/// # Safety
/// `theta` must point to `len` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_orbit_gram(
    model: *const GaugelabModel,
    theta: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> GaugelabStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let gens = m.generators();
        check_len(gens.count() * gens.count(), out_len)?;
        let h = orbit_gram(gens.as_ref(), in_slice(theta, len, "theta")?)?;
        let dst = out_slice(out, out_len, "out")?;
        for (i, v) in dst.iter_mut().enumerate() {
            *v = h[(i / h.ncols(), i % h.ncols())];
        }
        Ok(())
    })
}

/// Entropic gauge correction `(sigma^2 / 2 beta) log det G`.
///
/// Uses the model's explicit gauge when it has one and the balanced gauge
/// (`G = H`) otherwise.
///
/// # Safety
/// `theta` must point to `len` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_model_gauge_correction(
    model: *const GaugelabModel,
    theta: *const f64,
    len: usize,
    sigma: f64,
    beta: f64,
    out: *mut f64,
) -> GaugelabStatus {
    guard(|| {
        let m = &model_ref(model)?.inner;
        let theta = in_slice(theta, len, "theta")?;
        let (gens, gauge) = m.gauge().unwrap_or_else(|| (m.generators(), GaugeMap::balanced()));
        let v = gauge_correction(gens.as_ref(), &gauge, theta, sigma, beta)?;
        write_out(out, v, "out")
    })
}

/// Run an experiment from a JSON config and return the report as JSON.
///
/// The report string must be released with [`gaugelab_string_free`]. A run
/// that diverges still returns `Ok` with its `failure` field set.
///
/// # Safety
/// `config_json` must be NUL-terminated and `report_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_run_experiment(
    config_json: *const c_char,
    report_out: *mut *mut c_char,
) -> GaugelabStatus {
    guard(|| {
        if report_out.is_null() {
            return Err(null("report_out"));
        }
        let cfg = ExperimentConfig::from_json(c_str(config_json, "config_json")?)?;
        let report = run_experiment(&cfg)?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        let s = CString::new(json).map_err(|_| Fail(GaugelabStatus::Panic, "report contains NUL".into()))?;
        report_out.write(s.into_raw());
        Ok(())
    })
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gaugelab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
