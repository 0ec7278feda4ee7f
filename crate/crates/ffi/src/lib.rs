//! C ABI over the fnirs-pain library.
//!
//! Every fallible call returns an [`FnirsStatus`]; on failure a message is
//! kept per thread and read with [`fnirs_last_error`]. Models live behind the
//! opaque [`FnirsModel`] handle and must be released with
//! [`fnirs_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fnirs_pain::layers::checkpoint::{load_checkpoint, save_checkpoint};
use fnirs_pain::layers::{build_model, predict, predict_proba, InputShape, ModelKind, ModelSpec, ModelState};
use fnirs_pain::numerics::Tensor;
use fnirs_pain::report::{classification_metrics, confusion_matrix};
use fnirs_pain::synthgen::{generate_dataset, SynthConfig};
use fnirs_pain::{config, dataio, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FnirsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    Checkpoint = 6,
    Internal = 7,
}

/// Opaque trained or freshly initialized model.
pub struct FnirsModel {
    inner: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> FnirsStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => FnirsStatus::ShapeMismatch,
        Error::MissingFile(_) | Error::Io { .. } => FnirsStatus::Io,
        Error::Parse { .. } | Error::UnknownClass(_) => FnirsStatus::Parse,
        Error::Checkpoint(_) => FnirsStatus::Checkpoint,
        _ => FnirsStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for [`fnirs_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (FnirsStatus, String)>) -> FnirsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FnirsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FnirsStatus::Internal
        }
    }
}

fn lib<T>(r: fnirs_pain::Result<T>) -> Result<T, (FnirsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (FnirsStatus, String) {
    (FnirsStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FnirsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FnirsStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const FnirsModel) -> Result<&'a ModelState, (FnirsStatus, String)> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fnirs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fnirs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a model with the default widths (64, 32), dropout 0.5 and four
/// classes. `kind` is one of "mlp", "lstm_fwd", "lstm_bwd", "bilstm".
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_build(
    kind: *const c_char,
    steps: usize,
    channels: usize,
    seed: u64,
    out: *mut *mut FnirsModel,
) -> FnirsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: ModelKind = lib(str_arg(kind, "kind")?.parse())?;
        let inner = lib(build_model(&ModelSpec::standard(kind), InputShape { steps, channels }, seed))?;
        *out = Box::into_raw(Box::new(FnirsModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint written by `train` or [`fnirs_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_load(path: *const c_char, out: *mut *mut FnirsModel) -> FnirsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = lib(load_checkpoint(&PathBuf::from(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(FnirsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_save(model: *const FnirsModel, path: *const c_char) -> FnirsStatus {
    guard(|| {
        let m = model_ref(model)?;
        lib(save_checkpoint(m, &PathBuf::from(str_arg(path, "path")?)))
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_free(model: *mut FnirsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_info(
    model: *const FnirsModel,
    steps: *mut usize,
    channels: *mut usize,
    n_classes: *mut usize,
    param_count: *mut usize,
) -> FnirsStatus {
    guard(|| {
        let m = model_ref(model)?;
        if steps.is_null() || channels.is_null() || n_classes.is_null() || param_count.is_null() {
            return Err(null("output"));
        }
        *steps = m.input.steps;
        *channels = m.input.channels;
        *n_classes = m.spec.n_classes;
        *param_count = m.param_count();
        Ok(())
    })
}

unsafe fn batch_arg(m: &ModelState, windows: *const f64, batch: usize) -> Result<Tensor, (FnirsStatus, String)> {
    if windows.is_null() {
        return Err(null("windows"));
    }
    if batch == 0 {
        return Err((FnirsStatus::InvalidArgument, "batch must be positive".into()));
    }
    let (t, c) = (m.input.steps, m.input.channels);
    let data = std::slice::from_raw_parts(windows, batch * t * c).to_vec();
    lib(Tensor::new(vec![batch, t, c], data))
}

/// Class probabilities for `batch` windows laid out row-major as
/// `batch × steps × channels`. Writes `batch × n_classes` values.
///
/// # Safety
/// `windows` must hold `batch·steps·channels` doubles and `probs`
/// room for `batch·n_classes`.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_predict_proba(
    model: *const FnirsModel,
    windows: *const f64,
    batch: usize,
    probs: *mut f64,
) -> FnirsStatus {
    guard(|| {
        let m = model_ref(model)?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        let p = lib(predict_proba(m, &batch_arg(m, windows, batch)?))?;
        ptr::copy_nonoverlapping(p.data().as_ptr(), probs, p.len());
        Ok(())
    })
}

/// Predicted class codes (0 low_cold, 1 low_heat, 2 high_cold, 3 high_heat).
///
/// # Safety
/// As [`fnirs_model_predict_proba`], with room for `batch` codes.
#[no_mangle]
pub unsafe extern "C" fn fnirs_model_predict(
    model: *const FnirsModel,
    windows: *const f64,
    batch: usize,
    classes: *mut u32,
) -> FnirsStatus {
    guard(|| {
        let m = model_ref(model)?;
        if classes.is_null() {
            return Err(null("classes"));
        }
        let preds = lib(predict(m, &batch_arg(m, windows, batch)?))?;
        for (i, p) in preds.into_iter().enumerate() {
            *classes.add(i) = p as u32;
        }
        Ok(())
    })
}

/// Accuracy and macro one-vs-rest sensitivity and specificity, in percent.
///
/// # Safety
/// `predictions` and `truths` must hold `n` codes; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fnirs_metrics(
    predictions: *const u32,
    truths: *const u32,
    n: usize,
    n_classes: usize,
    accuracy: *mut f64,
    sensitivity: *mut f64,
    specificity: *mut f64,
) -> FnirsStatus {
    guard(|| {
        if predictions.is_null() || truths.is_null() {
            return Err(null("labels"));
        }
        if accuracy.is_null() || sensitivity.is_null() || specificity.is_null() {
            return Err(null("output"));
        }
        let to_usize = |p: *const u32| -> Vec<usize> {
            std::slice::from_raw_parts(p, n).iter().map(|&v| v as usize).collect()
        };
        let cm = lib(confusion_matrix(&to_usize(predictions), &to_usize(truths), n_classes))?;
        let m = lib(classification_metrics(&cm))?;
        *accuracy = m.accuracy;
        *sensitivity = m.sensitivity;
        *specificity = m.specificity;
        Ok(())
    })
}

/// Generates a synthetic dataset into `out_dir`. `config_path` may be NULL
/// for defaults; `seed` overrides the config's seed.
///
/// # Safety
/// Strings must be NUL-terminated; `n_recordings` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fnirs_synth_generate(
    config_path: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    n_recordings: *mut usize,
) -> FnirsStatus {
    guard(|| {
        let mut cfg = if config_path.is_null() {
            SynthConfig::default()
        } else {
            let entries = lib(config::parse_file(&PathBuf::from(str_arg(config_path, "config_path")?)))?;
            lib(SynthConfig::from_entries(&entries))?
        };
        cfg.seed = seed;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let (recs, _) = lib(generate_dataset(&cfg))?;
        lib(dataio::write_dataset(&dir, &recs))?;
        if !n_recordings.is_null() {
            *n_recordings = recs.len();
        }
        Ok(())
    })
}
