//! C ABI for loading trained models, encoding beats into latent vectors,
//! and running ensemble classification.
//!
//! Conventions:
//! - Every fallible function returns a `CardiolatStatus`; nonzero means
//!   failure and `cardiolat_last_error` returns a message for the calling
//!   thread.
//! - Handles are opaque; free them with the matching `_free` function.
//!   Passing NULL to a `_free` is a no-op; anywhere else it is an error.
//! - Beats are passed as parallel `times`/`values` arrays with times
//!   strictly increasing from 0 to 1 and at least two samples.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cardiolat::beat::{Beat, BeatClass};
use cardiolat::gbdt::GbdtModel;
use cardiolat::latent::LatentOdeModel;
use cardiolat::ode::SolverConfig;
use cardiolat::pipeline::predict_ensemble;
use cardiolat::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardiolatStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Numeric = 5,
    Solver = 6,
    Invalid = 7,
    Panic = 8,
}

/// Opaque encoder handle: a trained latent ODE plus solver settings.
pub struct CardiolatEncoder {
    model: LatentOdeModel,
    solver: SolverConfig,
}

/// Opaque classifier handle.
pub struct CardiolatClassifier {
    model: GbdtModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> CardiolatStatus {
    match e {
        Error::Io { .. } => CardiolatStatus::Io,
        Error::Parse { .. } | Error::Serde(_) => CardiolatStatus::Parse,
        Error::Numeric(_) => CardiolatStatus::Numeric,
        Error::Solver { .. } => CardiolatStatus::Solver,
        Error::Shape { .. } | Error::Invalid(_) => CardiolatStatus::Invalid,
    }
}

fn fail(e: &Error) -> CardiolatStatus {
    set_error(&e.to_string());
    status_of(e)
}

/// Runs a closure with panics converted to a status code, never unwinding
/// across the FFI boundary.
fn guarded<F: FnOnce() -> CardiolatStatus>(f: F) -> CardiolatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CardiolatStatus::Panic
        }
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, CardiolatStatus> {
    if ptr.is_null() {
        set_error("path is NULL");
        return Err(CardiolatStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(CardiolatStatus::InvalidUtf8)
        }
    }
}

unsafe fn beat_from(
    times: *const f64,
    values: *const f64,
    len: usize,
) -> Result<Beat, CardiolatStatus> {
    if times.is_null() || values.is_null() {
        set_error("times/values is NULL");
        return Err(CardiolatStatus::NullArgument);
    }
    let times = std::slice::from_raw_parts(times, len).to_vec();
    let values = std::slice::from_raw_parts(values, len).to_vec();
    let beat = Beat {
        times,
        values,
        label: BeatClass::Q,
        record_name: "ffi".into(),
        r_peak_index: 0,
        effective_frequency: if len > 1 { (len - 1) as f64 } else { 0.0 },
        amp_min: 0.0,
        amp_max: 1.0,
    };
    match beat.validate() {
        Ok(()) => Ok(beat),
        Err(e) => {
            set_error(&e.to_string());
            Err(CardiolatStatus::Invalid)
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cardiolat_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a latent ODE checkpoint (JSON produced by the trainer).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_encoder_load(
    path: *const c_char,
    out: *mut *mut CardiolatEncoder,
) -> CardiolatStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is NULL");
            return CardiolatStatus::NullArgument;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match LatentOdeModel::load(path) {
            Ok(model) => {
                let handle = Box::new(CardiolatEncoder {
                    model,
                    solver: SolverConfig::default(),
                });
                *out = Box::into_raw(handle);
                CardiolatStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Frees an encoder. NULL is accepted.
///
/// # Safety
/// `handle` must be NULL or a pointer from `cardiolat_encoder_load`.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_encoder_free(handle: *mut CardiolatEncoder) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Latent dimensionality of a loaded encoder (0 for NULL).
///
/// # Safety
/// `handle` must be NULL or a valid encoder handle.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_encoder_latent_dim(handle: *const CardiolatEncoder) -> usize {
    if handle.is_null() {
        0
    } else {
        (*handle).model.latent_dim
    }
}

/// Loads a GBDT classifier (JSON produced by the trainer).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_classifier_load(
    path: *const c_char,
    out: *mut *mut CardiolatClassifier,
) -> CardiolatStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is NULL");
            return CardiolatStatus::NullArgument;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match GbdtModel::load(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(CardiolatClassifier { model }));
                CardiolatStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Frees a classifier. NULL is accepted.
///
/// # Safety
/// `handle` must be NULL or a pointer from `cardiolat_classifier_load`.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_classifier_free(handle: *mut CardiolatClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Encodes one beat into a latent vector sample (deterministic in `seed`).
/// `z0_out` must hold `cardiolat_encoder_latent_dim` doubles.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_encode(
    handle: *const CardiolatEncoder,
    times: *const f64,
    values: *const f64,
    len: usize,
    seed: u64,
    z0_out: *mut f64,
    z0_len: usize,
) -> CardiolatStatus {
    guarded(|| {
        if handle.is_null() || z0_out.is_null() {
            set_error("handle/z0_out is NULL");
            return CardiolatStatus::NullArgument;
        }
        let encoder = &*handle;
        if z0_len != encoder.model.latent_dim {
            set_error("z0_out length does not match the model's latent dimension");
            return CardiolatStatus::Invalid;
        }
        let beat = match beat_from(times, values, len) {
            Ok(b) => b,
            Err(s) => return s,
        };
        match encoder.model.encode_sample(&beat, 0, seed, &encoder.solver) {
            Ok(lv) => {
                std::slice::from_raw_parts_mut(z0_out, z0_len).copy_from_slice(&lv.z0);
                CardiolatStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Classifies one beat with an `n_votes` seed ensemble. On success writes
/// the winning class index (0..5 for N,S,V,F,Q) to `class_out` and, when
/// `probs_out` is non-NULL, the 5 ensemble-averaged class probabilities.
///
/// # Safety
/// All pointers must be valid; `probs_out`, if non-NULL, must hold 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn cardiolat_predict(
    encoder: *const CardiolatEncoder,
    classifier: *const CardiolatClassifier,
    times: *const f64,
    values: *const f64,
    len: usize,
    n_votes: usize,
    seed: u64,
    class_out: *mut u32,
    probs_out: *mut f64,
) -> CardiolatStatus {
    guarded(|| {
        if encoder.is_null() || classifier.is_null() || class_out.is_null() {
            set_error("encoder/classifier/class_out is NULL");
            return CardiolatStatus::NullArgument;
        }
        let enc = &*encoder;
        let cls = &*classifier;
        let beat = match beat_from(times, values, len) {
            Ok(b) => b,
            Err(s) => return s,
        };
        match predict_ensemble(&enc.model, &cls.model, &beat, n_votes, seed, &enc.solver) {
            Ok(p) => {
                *class_out = p.final_class.index() as u32;
                if !probs_out.is_null() {
                    std::slice::from_raw_parts_mut(probs_out, BeatClass::COUNT)
                        .copy_from_slice(&p.mean_probs);
                }
                CardiolatStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Single-character class symbol for an index from `cardiolat_predict`,
/// or NULL for an out-of-range index.
#[no_mangle]
pub extern "C" fn cardiolat_class_name(index: u32) -> *const c_char {
    match index {
        0 => c"N".as_ptr(),
        1 => c"S".as_ptr(),
        2 => c"V".as_ptr(),
        3 => c"F".as_ptr(),
        4 => c"Q".as_ptr(),
        _ => std::ptr::null(),
    }
}
