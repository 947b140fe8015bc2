//! C ABI for the vgsloc library: load checkpoints, score feature files,
//! localise keywords, run whole experiments and compute keyword
//! co-occurrence, from any language that can call C.
//!
//! Conventions:
//! * every fallible function returns a [`VgslocStatus`] code;
//! * `vgsloc_last_error()` returns a thread-local message for the most
//!   recent failure in the calling thread;
//! * objects returned through out-pointers are owned by the caller and
//!   must be released with the matching `_free` function;
//! * undefined metric values are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use vgsloc::error::Error;
use vgsloc::eval::normalised_kappa;
use vgsloc::exp::{run_experiment, ExperimentConfig};
use vgsloc::features::FeatureSequence;
use vgsloc::localise::{
    argmax_location, locate_attention, locate_gradcam_from_trace, locate_masked_all,
    locate_score_agg, MaskConfig, MaskMode, Method,
};
use vgsloc::model::checkpoint::Checkpoint;
use vgsloc::model::Model;
use vgsloc::toygen::{generate_toy_corpus, ToyConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VgslocStatus {
    Ok = 0,
    /// A pointer argument was null or an argument was out of range.
    InvalidArgument = 1,
    /// Filesystem failure.
    Io = 2,
    /// A file existed but could not be parsed.
    Parse = 3,
    /// Checkpoint and data (or model) do not fit together.
    Incompatible = 4,
    /// Any other library error; see `vgsloc_last_error`.
    Internal = 5,
    /// A panic was caught at the boundary; state may be stale.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> VgslocStatus {
    match err {
        Error::Io { .. } => VgslocStatus::Io,
        Error::ManifestParse { .. }
        | Error::TextGrid { .. }
        | Error::Json { .. }
        | Error::FeatureFile { .. } => VgslocStatus::Parse,
        Error::IncompatibleCheckpoint(_)
        | Error::VocabularyHashMismatch
        | Error::FeatureDimMismatch { .. } => VgslocStatus::Incompatible,
        Error::Stage { source, .. } => status_of(source),
        _ => VgslocStatus::Internal,
    }
}

fn fail(err: Error) -> VgslocStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn guard(f: impl FnOnce() -> VgslocStatus) -> VgslocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic inside vgsloc");
            VgslocStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn path_arg(ptr: *const c_char) -> Option<PathBuf> {
    if ptr.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(ptr) }.to_str().ok()?;
    Some(PathBuf::from(s))
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}

/// Message for the most recent error in this thread. The pointer stays
/// valid until the next failing vgsloc call on the same thread.
#[no_mangle]
pub extern "C" fn vgsloc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vgsloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Generate a deterministic synthetic corpus from a JSON config string.
///
/// # Safety
/// Both arguments must be valid NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn vgsloc_toygen(
    config_json: *const c_char,
    out_dir: *const c_char,
) -> VgslocStatus {
    guard(|| {
        let (Some(json), Some(dir)) =
            (unsafe { str_arg(config_json) }, unsafe { path_arg(out_dir) })
        else {
            set_error("null or non-UTF-8 argument");
            return VgslocStatus::InvalidArgument;
        };
        let cfg: ToyConfig = match serde_json::from_str(json) {
            Ok(c) => c,
            Err(e) => {
                set_error(&format!("toy config: {e}"));
                return VgslocStatus::Parse;
            }
        };
        match generate_toy_corpus(&cfg, &dir) {
            Ok(_) => VgslocStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Run the full experiment pipeline from a JSON config file on disk.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn vgsloc_run_experiment(config_path: *const c_char) -> VgslocStatus {
    guard(|| {
        let Some(path) = (unsafe { path_arg(config_path) }) else {
            set_error("null or non-UTF-8 argument");
            return VgslocStatus::InvalidArgument;
        };
        let cfg = match ExperimentConfig::from_file(&path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match run_experiment(&cfg) {
            Ok(_) => VgslocStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Opaque handle to a trained model ready for inference.
pub struct VgslocModel {
    model: Model<f64>,
    mask: MaskConfig,
}

/// Load a checkpoint (base path without the .bin/.json extension).
///
/// # Safety
/// `checkpoint_base` must be a valid NUL-terminated UTF-8 string and
/// `out_model` a valid pointer; on success the caller owns the handle and
/// must release it with [`vgsloc_model_free`].
#[no_mangle]
pub unsafe extern "C" fn vgsloc_model_load(
    checkpoint_base: *const c_char,
    out_model: *mut *mut VgslocModel,
) -> VgslocStatus {
    guard(|| {
        let Some(path) = (unsafe { path_arg(checkpoint_base) }) else {
            set_error("null or non-UTF-8 checkpoint path");
            return VgslocStatus::InvalidArgument;
        };
        if out_model.is_null() {
            set_error("null out_model");
            return VgslocStatus::InvalidArgument;
        }
        let ckpt = match Checkpoint::load(&path) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let model = match ckpt.to_model() {
            Ok(m) => m.cast::<f64>(),
            Err(e) => return fail(e),
        };
        let handle = Box::new(VgslocModel {
            model,
            mask: MaskConfig::default(),
        });
        unsafe { *out_model = Box::into_raw(handle) };
        VgslocStatus::Ok
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be a pointer previously returned by
/// [`vgsloc_model_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vgsloc_model_free(model: *mut VgslocModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of keywords the model scores.
///
/// # Safety
/// `model` must be a live handle from [`vgsloc_model_load`].
#[no_mangle]
pub unsafe extern "C" fn vgsloc_model_vocab_size(model: *const VgslocModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.model.cfg.vocab_size
}

fn load_feature_file(path: &Path) -> Result<FeatureSequence, Error> {
    FeatureSequence::load(path)
}

/// Detection probabilities for every keyword over one feature file.
/// `scores_out` must hold at least `vgsloc_model_vocab_size` doubles.
///
/// # Safety
/// `model` must be a live handle, `features_path` a valid NUL-terminated
/// string and `scores_out` writable for `scores_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vgsloc_model_detect(
    model: *const VgslocModel,
    features_path: *const c_char,
    scores_out: *mut f64,
    scores_len: usize,
) -> VgslocStatus {
    guard(|| {
        if model.is_null() || scores_out.is_null() {
            set_error("null argument");
            return VgslocStatus::InvalidArgument;
        }
        let handle = unsafe { &*model };
        let v = handle.model.cfg.vocab_size;
        if scores_len < v {
            set_error(&format!("scores buffer holds {scores_len}, need {v}"));
            return VgslocStatus::InvalidArgument;
        }
        let Some(path) = (unsafe { path_arg(features_path) }) else {
            set_error("null or non-UTF-8 features path");
            return VgslocStatus::InvalidArgument;
        };
        let features = match load_feature_file(&path) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        let trace = match handle.model.forward(&features) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let out = unsafe { std::slice::from_raw_parts_mut(scores_out, v) };
        for (dst, &y) in out.iter_mut().zip(trace.y_hat.iter()) {
            *dst = y;
        }
        VgslocStatus::Ok
    })
}

/// Localise one keyword in one feature file with the named method
/// (`attention`, `score_agg`, `gradcam`, `masked_in`, `masked_out`).
/// Writes the predicted time (seconds) and the detection probability.
///
/// # Safety
/// `model` must be a live handle; string arguments valid NUL-terminated
/// UTF-8; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn vgsloc_model_localise(
    model: *const VgslocModel,
    features_path: *const c_char,
    keyword_index: usize,
    method: *const c_char,
    tau_s_out: *mut f64,
    detection_out: *mut f64,
) -> VgslocStatus {
    guard(|| {
        if model.is_null() || tau_s_out.is_null() || detection_out.is_null() {
            set_error("null argument");
            return VgslocStatus::InvalidArgument;
        }
        let handle = unsafe { &*model };
        if keyword_index >= handle.model.cfg.vocab_size {
            set_error(&format!(
                "keyword index {keyword_index} out of range (V = {})",
                handle.model.cfg.vocab_size
            ));
            return VgslocStatus::InvalidArgument;
        }
        let (Some(path), Some(method_name)) =
            (unsafe { path_arg(features_path) }, unsafe { str_arg(method) })
        else {
            set_error("null or non-UTF-8 argument");
            return VgslocStatus::InvalidArgument;
        };
        let method: Method = match method_name.parse() {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let features = match load_feature_file(&path) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        let result = (|| -> Result<vgsloc::localise::LocalisationScores, Error> {
            match method {
                Method::Attention | Method::ScoreAgg | Method::GradCam => {
                    let trace = handle.model.forward(&features)?;
                    match method {
                        Method::Attention => locate_attention(&trace, keyword_index),
                        Method::ScoreAgg => locate_score_agg(&trace, keyword_index),
                        _ => locate_gradcam_from_trace(&handle.model, &trace, keyword_index),
                    }
                }
                Method::MaskedIn | Method::MaskedOut => {
                    let mode = if method == Method::MaskedIn {
                        MaskMode::In
                    } else {
                        MaskMode::Out
                    };
                    let mut all =
                        locate_masked_all(&handle.model, &features, mode, &handle.mask)?;
                    Ok(all.swap_remove(keyword_index))
                }
            }
        })();
        match result {
            Ok(scores) => match argmax_location(&scores) {
                Ok(tau) => {
                    unsafe {
                        *tau_s_out = tau;
                        *detection_out = scores.detection_score;
                    }
                    VgslocStatus::Ok
                }
                Err(e) => fail(e),
            },
            Err(e) => fail(e),
        }
    })
}

/// Normalised Cohen kappa between two binary vectors (0/1 bytes).
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct VgslocKappa {
    pub p_o: f64,
    pub p_e: f64,
    pub p_max: f64,
    /// NaN when undefined (p_e = 1).
    pub kappa: f64,
    pub kappa_max: f64,
    /// NaN when undefined (degenerate marginals).
    pub kappa_norm: f64,
    /// 1 when the inputs make kappa or its maximum degenerate.
    pub degenerate: u8,
}

/// # Safety
/// `a` and `b` must point to `len` readable bytes each; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vgsloc_kappa(
    a: *const u8,
    b: *const u8,
    len: usize,
    out: *mut VgslocKappa,
) -> VgslocStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null argument");
            return VgslocStatus::InvalidArgument;
        }
        let av: Vec<bool> = unsafe { std::slice::from_raw_parts(a, len) }
            .iter()
            .map(|&x| x != 0)
            .collect();
        let bv: Vec<bool> = unsafe { std::slice::from_raw_parts(b, len) }
            .iter()
            .map(|&x| x != 0)
            .collect();
        match normalised_kappa(&av, &bv) {
            Ok(r) => {
                unsafe {
                    *out = VgslocKappa {
                        p_o: r.p_o,
                        p_e: r.p_e,
                        p_max: r.p_max,
                        kappa: r.kappa.unwrap_or(f64::NAN),
                        kappa_max: r.kappa_max.unwrap_or(f64::NAN),
                        kappa_norm: r.kappa_norm.unwrap_or(f64::NAN),
                        degenerate: r.degenerate as u8,
                    };
                }
                VgslocStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
