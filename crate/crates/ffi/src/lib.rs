//! C ABI over the apcgnn classifier.
//!
//! Models are opaque `ApcModel` handles. Every call returns an `ApcStatus`;
//! on failure `apc_last_error_message` describes the most recent error on the
//! calling thread. Strings handed out by the library must be released with
//! `apc_string_free`, models with `apc_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use apcgnn::data::{generate_synthetic_cohort, SyntheticConfig};
use apcgnn::explain::{parse_patient, predict_new};
use apcgnn::trainer::{train, TrainConfig, TrainedModel};

/// Opaque trained model.
pub struct ApcModel {
    inner: TrainedModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    ModelFormat = 4,
    Training = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(ApcStatus, String);

impl From<apcgnn::Error> for Failure {
    fn from(e: apcgnn::Error) -> Self {
        use apcgnn::Error as E;
        let status = match &e {
            E::Io(_) => ApcStatus::Io,
            E::Model(_) | E::Json(_) => ApcStatus::ModelFormat,
            E::Diverged { .. } | E::NonFinite(_) => ApcStatus::Training,
            _ => ApcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ApcStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ApcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ApcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ApcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(ApcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn model_arg<'a>(m: *const ApcModel) -> Result<&'a TrainedModel, Failure> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| Failure(ApcStatus::NullPointer, "model is null".into()))
}

fn out_arg<T>(p: *mut T) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(ApcStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn apc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn apc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Trains on a synthetic cohort of `n` patients. `config_json` may be null
/// for defaults or a JSON object overriding any training option.
///
/// # Safety
/// `config_json` must be null or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apc_model_train_synthetic(
    n: usize,
    seed: u64,
    config_json: *const c_char,
    out: *mut *mut ApcModel,
) -> ApcStatus {
    guard(|| {
        out_arg(out)?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config")?)
                .map_err(|e| invalid(format!("config: {e}")))?
        };
        let cohort = generate_synthetic_cohort(n, seed, &SyntheticConfig::default())?;
        let model = train(&cohort, &cfg)?.model;
        *out = Box::into_raw(Box::new(ApcModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apc_model_load(path: *const c_char, out: *mut *mut ApcModel) -> ApcStatus {
    guard(|| {
        out_arg(out)?;
        let model = TrainedModel::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(ApcModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn apc_model_save(model: *const ApcModel, path: *const c_char) -> ApcStatus {
    guard(|| {
        model_arg(model)?.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn apc_model_free(model: *mut ApcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features the model expects.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn apc_model_num_features(model: *const ApcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.feature_names.len())
}

/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn apc_model_num_classes(model: *const ApcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_names.len())
}

/// Predicts one patient from raw measurements in model feature order. NaN
/// marks a missing value. Writes `n_classes` probabilities and the predicted
/// class index.
///
/// # Safety
/// `features` must hold `n_features` doubles, `probs` room for `n_classes`,
/// and `class_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn apc_model_predict(
    model: *const ApcModel,
    features: *const f64,
    n_features: usize,
    probs: *mut f64,
    n_classes: usize,
    class_out: *mut usize,
) -> ApcStatus {
    guard(|| {
        let m = model_arg(model)?;
        if features.is_null() {
            return Err(Failure(ApcStatus::NullPointer, "features is null".into()));
        }
        out_arg(probs)?;
        if n_features != m.feature_names.len() {
            return Err(invalid(format!(
                "expected {} features, got {n_features}",
                m.feature_names.len()
            )));
        }
        if n_classes != m.class_names.len() {
            return Err(invalid(format!(
                "expected room for {} classes, got {n_classes}",
                m.class_names.len()
            )));
        }
        let row: Vec<Option<f64>> = std::slice::from_raw_parts(features, n_features)
            .iter()
            .map(|&v| (!v.is_nan()).then_some(v))
            .collect();
        let report = predict_new(&row, m)?;
        std::slice::from_raw_parts_mut(probs, n_classes).copy_from_slice(&report.probabilities);
        if !class_out.is_null() {
            *class_out = report.predicted_class;
        }
        Ok(())
    })
}

/// Predicts from a JSON feature object (`null` or absent keys are missing)
/// and returns the full explanation report as JSON in `out_json`.
///
/// # Safety
/// `patient_json` must be a valid C string; `out_json` must be writable. The
/// returned string must be released with `apc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn apc_model_predict_json(
    model: *const ApcModel,
    patient_json: *const c_char,
    out_json: *mut *mut c_char,
) -> ApcStatus {
    guard(|| {
        out_arg(out_json)?;
        let m = model_arg(model)?;
        let body: serde_json::Value = serde_json::from_str(str_arg(patient_json, "patient")?)
            .map_err(|e| invalid(format!("patient: {e}")))?;
        let row = parse_patient(&body, &m.feature_names).map_err(|errs| {
            let list: Vec<String> = errs.iter().map(|e| format!("{}: {}", e.field, e.reason)).collect();
            invalid(list.join("; "))
        })?;
        let text = serde_json::to_string(&predict_new(&row, m)?).map_err(apcgnn::Error::from)?;
        *out_json = CString::new(text)
            .map_err(|_| invalid("report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn apc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
