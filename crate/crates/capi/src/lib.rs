//! C ABI over the separation toolkit: opaque model handles, status-code
//! returns, and a thread-local last-error message.
//!
//! Conventions: every function returns [`SkStatus`]; out-parameters are
//! written only on `SK_OK`; null pointers yield `SK_ERR_NULL`; panics are
//! caught at the boundary and reported as `SK_ERR_PANIC`. Strings are
//! NUL-terminated UTF-8. The generated header lives in `include/sepkit.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sepkit::config::Config;
use sepkit::models::{load_checkpoint, receptive_field, ModelConfig, SeparationModel};
use sepkit::objectives::si_sdr_db;
use sepkit::AudioClip;
use sepkit::Error;

/// Result of every API call.
#[repr(i32)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkStatus {
    /// Success.
    SK_OK = 0,
    /// Invalid argument or configuration.
    SK_ERR_INVALID_ARG = 1,
    /// Numeric or runtime failure.
    SK_ERR_RUNTIME = 2,
    /// File or checkpoint I/O failure.
    SK_ERR_IO = 3,
    /// A required pointer was null.
    SK_ERR_NULL = 4,
    /// A string argument was not valid UTF-8.
    SK_ERR_UTF8 = 5,
    /// A panic was caught at the boundary.
    SK_ERR_PANIC = 6,
}

/// Opaque separation model handle; create with `sk_model_from_config` or
/// `sk_model_load`, release with `sk_model_free`.
pub struct SkModel {
    inner: SeparationModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(cleaned).expect("NUL bytes removed above");
    });
}

fn status_of(err: &Error) -> SkStatus {
    match err {
        Error::Io(_) => SkStatus::SK_ERR_IO,
        Error::Config(_) | Error::InvalidArg { .. } | Error::Shape { .. } => {
            SkStatus::SK_ERR_INVALID_ARG
        }
        _ => SkStatus::SK_ERR_RUNTIME,
    }
}

fn fail(err: &Error) -> SkStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn null_arg(name: &str) -> SkStatus {
    set_error(&format!("null pointer argument `{name}`"));
    SkStatus::SK_ERR_NULL
}

/// Runs `f` with panics converted to `SK_ERR_PANIC`.
fn guarded(f: impl FnOnce() -> SkStatus) -> SkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".to_string());
            set_error(&format!("panic: {msg}"));
            SkStatus::SK_ERR_PANIC
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SkStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("argument `{name}` is not valid UTF-8"));
        SkStatus::SK_ERR_UTF8
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread; empty string if
/// none. The pointer stays valid until the next failing call on the same
/// thread.
#[no_mangle]
pub extern "C" fn sk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a model from config text (`key = value` lines, `#` comments;
/// unknown keys are rejected) and a parameter-init seed.
///
/// # Safety
/// `config_text` must be NUL-terminated; `out` must point to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_model_from_config(
    config_text: *const c_char,
    seed: u64,
    out: *mut *mut SkModel,
) -> SkStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let text = match utf8_arg(config_text, "config_text") {
            Ok(t) => t,
            Err(status) => return status,
        };
        let build = || -> Result<SeparationModel, Error> {
            let cfg = Config::parse(text)?;
            let mc = ModelConfig::from_config(&cfg)?;
            cfg.reject_unknown()?;
            SeparationModel::new(mc, seed)
        };
        match build() {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SkModel { inner: model }));
                SkStatus::SK_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_model_load(path: *const c_char, out: *mut *mut SkModel) -> SkStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_checkpoint(path) {
            Ok(ck) => {
                *out = Box::into_raw(Box::new(SkModel { inner: ck.model }));
                SkStatus::SK_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a model handle; a null handle is a no-op.
///
/// # Safety
/// `model` must be null or a pointer returned by a constructor, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn sk_model_free(model: *mut SkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Caller contract of the public fns below: `model` is a live handle.
unsafe fn model_ref<'a>(model: *const SkModel) -> Result<&'a SkModel, SkStatus> {
    if model.is_null() {
        Err(null_arg("model"))
    } else {
        Ok(&*model)
    }
}

/// Number of output speakers.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_model_num_speakers(
    model: *const SkModel,
    out: *mut usize,
) -> SkStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match model_ref(model) {
            Ok(m) => {
                *out = m.inner.num_speakers();
                SkStatus::SK_OK
            }
            Err(status) => status,
        }
    })
}

/// Sample rate the model expects, in Hz.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_model_sample_rate(model: *const SkModel, out: *mut u32) -> SkStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match model_ref(model) {
            Ok(m) => {
                *out = m.inner.config().sample_rate;
                SkStatus::SK_OK
            }
            Err(status) => status,
        }
    })
}

/// Total trainable parameter count.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_model_num_params(model: *const SkModel, out: *mut usize) -> SkStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match model_ref(model) {
            Ok(m) => {
                *out = m.inner.num_params();
                SkStatus::SK_OK
            }
            Err(status) => status,
        }
    })
}

/// Analytic receptive field of the model: frames, seconds, and whether a
/// global-context block makes the effective field unbounded (1/0).
///
/// # Safety
/// `model` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_receptive_field(
    model: *const SkModel,
    frames: *mut usize,
    seconds: *mut f64,
    global: *mut i32,
) -> SkStatus {
    guarded(|| {
        if frames.is_null() {
            return null_arg("frames");
        }
        if seconds.is_null() {
            return null_arg("seconds");
        }
        if global.is_null() {
            return null_arg("global");
        }
        match model_ref(model) {
            Ok(m) => {
                let rf = receptive_field(m.inner.config());
                *frames = rf.frames;
                *seconds = rf.seconds;
                *global = i32::from(rf.global);
                SkStatus::SK_OK
            }
            Err(status) => status,
        }
    })
}

/// Separates a mono mixture. `out` receives `num_speakers` rows of `len`
/// samples, row-major; `out_len` must equal `num_speakers * len`.
///
/// # Safety
/// `model` must be a live handle; `mixture` must hold `len` readable
/// doubles; `out` must hold `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_separate(
    model: *const SkModel,
    mixture: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut f64,
    out_len: usize,
) -> SkStatus {
    guarded(|| {
        if mixture.is_null() {
            return null_arg("mixture");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let m = match model_ref(model) {
            Ok(m) => m,
            Err(status) => return status,
        };
        let speakers = m.inner.num_speakers();
        if out_len != speakers.saturating_mul(len) {
            set_error(&format!(
                "out_len {} does not match num_speakers {} * len {}",
                out_len, speakers, len
            ));
            return SkStatus::SK_ERR_INVALID_ARG;
        }
        let samples = std::slice::from_raw_parts(mixture, len);
        let run = || -> Result<Vec<AudioClip>, Error> {
            let clip = AudioClip::new(samples.to_vec(), sample_rate)?;
            m.inner.separate(&clip)
        };
        match run() {
            Ok(estimates) => {
                let out = std::slice::from_raw_parts_mut(out, out_len);
                for (s, est) in estimates.iter().enumerate() {
                    out[s * len..(s + 1) * len].copy_from_slice(est.samples());
                }
                SkStatus::SK_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Scale-invariant SDR of `estimate` against `reference`, in dB.
///
/// # Safety
/// `estimate` and `reference` must each hold `len` readable doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_si_sdr_db(
    estimate: *const f64,
    reference: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut f64,
) -> SkStatus {
    guarded(|| {
        if estimate.is_null() {
            return null_arg("estimate");
        }
        if reference.is_null() {
            return null_arg("reference");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let est = std::slice::from_raw_parts(estimate, len);
        let refr = std::slice::from_raw_parts(reference, len);
        let run = || -> Result<f64, Error> {
            let e = AudioClip::new(est.to_vec(), sample_rate)?;
            let r = AudioClip::new(refr.to_vec(), sample_rate)?;
            si_sdr_db(&e, &r)
        };
        match run() {
            Ok(v) => {
                *out = v;
                SkStatus::SK_OK
            }
            Err(e) => fail(&e),
        }
    })
}
