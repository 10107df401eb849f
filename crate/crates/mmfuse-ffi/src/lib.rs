//! C ABI for the mmfuse classifiers.
//!
//! Checkpoints and datasets are opaque handles created by `*_load` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`MmfStatus`]; on failure `mmf_last_error` yields a thread-local
//! message valid until the next failing call on the same thread. Strings
//! returned as `char*` are owned by the caller and released with
//! `mmf_string_free`.

#![allow(clippy::missing_safety_doc)]

use mmfuse::checkpoint::AnyCheckpoint;
use mmfuse::data::{Dataset, Split};
use mmfuse::matrix::{Matrix, Scalar};
use mmfuse::models::{infer, predict};
use mmfuse::runner::{evaluate_checkpoint, regime_views, Regime};
use mmfuse::train::Checkpoint;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    BadFormat = 5,
    Unsupported = 6,
    Internal = 7,
}

/// Split selector for dataset queries.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfSplit {
    Train = 0,
    Dev = 1,
    Test = 2,
}

impl From<MmfSplit> for Split {
    fn from(s: MmfSplit) -> Self {
        match s {
            MmfSplit::Train => Split::Train,
            MmfSplit::Dev => Split::Dev,
            MmfSplit::Test => Split::Test,
        }
    }
}

/// Training/evaluation regime selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfRegime {
    All = 0,
    PairedAll = 1,
    PairedTrain = 2,
}

impl From<MmfRegime> for Regime {
    fn from(r: MmfRegime) -> Self {
        match r {
            MmfRegime::All => Regime::All,
            MmfRegime::PairedAll => Regime::PairedAll,
            MmfRegime::PairedTrain => Regime::PairedTrain,
        }
    }
}

/// Opaque trained-model handle.
pub struct MmfCheckpoint {
    inner: AnyCheckpoint,
}

/// Opaque dataset handle.
pub struct MmfDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(status: MmfStatus, message: impl std::fmt::Display) -> MmfStatus {
    let text = CString::new(message.to_string())
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
    status
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn mmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by an mmfuse call and not freed before.
#[no_mangle]
pub unsafe extern "C" fn mmf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, MmfStatus> {
    if ptr.is_null() {
        return Err(set_error(MmfStatus::NullPointer, "path is NULL"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(e) => Err(set_error(MmfStatus::InvalidUtf8, e)),
    }
}

/// Load an MMCK1 checkpoint file into an opaque handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_checkpoint_load(
    path: *const c_char,
    out: *mut *mut MmfCheckpoint,
) -> MmfStatus {
    if out.is_null() {
        return set_error(MmfStatus::NullPointer, "out is NULL");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match mmfuse::checkpoint::load(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MmfCheckpoint { inner }));
            MmfStatus::Ok
        }
        Err(e) => set_error(MmfStatus::BadFormat, e),
    }
}

/// # Safety
/// `handle` must come from `mmf_checkpoint_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mmf_checkpoint_free(handle: *mut MmfCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Model kind of a checkpoint (e.g. "mm-gated-xatt"), as an owned string.
///
/// # Safety
/// `handle` must be a live checkpoint handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_checkpoint_model(handle: *const MmfCheckpoint) -> *mut c_char {
    if handle.is_null() {
        return ptr::null_mut();
    }
    CString::new((*handle).inner.kind().as_str())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// Number of classes the checkpoint predicts.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mmf_checkpoint_num_classes(
    handle: *const MmfCheckpoint,
    out: *mut usize,
) -> MmfStatus {
    if handle.is_null() || out.is_null() {
        return set_error(MmfStatus::NullPointer, "handle or out is NULL");
    }
    *out = (*handle).inner.classes().len();
    MmfStatus::Ok
}

/// Load an MMFV1 dataset directory into an opaque handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_load(
    path: *const c_char,
    out: *mut *mut MmfDataset,
) -> MmfStatus {
    if out.is_null() {
        return set_error(MmfStatus::NullPointer, "out is NULL");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match mmfuse::data::load_dataset(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(MmfDataset { inner }));
            MmfStatus::Ok
        }
        Err(e) => set_error(MmfStatus::BadFormat, e),
    }
}

/// # Safety
/// `handle` must come from `mmf_dataset_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_free(handle: *mut MmfDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Record count of one split.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mmf_dataset_split_len(
    handle: *const MmfDataset,
    split: MmfSplit,
    out: *mut usize,
) -> MmfStatus {
    if handle.is_null() || out.is_null() {
        return set_error(MmfStatus::NullPointer, "handle or out is NULL");
    }
    *out = (*handle).inner.split_len(split.into());
    MmfStatus::Ok
}

fn predict_typed<F: Scalar>(
    ckpt: &Checkpoint<F>,
    text: Matrix<f32>,
    image: Option<Matrix<f32>>,
) -> Result<usize, (MmfStatus, String)> {
    let image = match (image, &ckpt.average_image) {
        (Some(img), _) => img,
        (None, Some(avg)) => avg.clone(),
        (None, None) => {
            return Err((
                MmfStatus::InvalidArgument,
                "no image supplied and checkpoint stores no average image".to_string(),
            ))
        }
    };
    let out = infer(&ckpt.params, &ckpt.model_config, &text.cast::<F>(), &image.cast::<F>())
        .map_err(|e| (MmfStatus::Internal, e.to_string()))?;
    Ok(predict(&out.logits))
}

/// Classify one example from row-major f32 feature buffers. `image` may be
/// NULL, in which case the checkpoint's stored average image is used.
/// Writes the predicted class index to `out_class`.
///
/// # Safety
/// `text` must point to `text_rows * text_cols` floats; `image`, when
/// non-NULL, to `image_rows * image_cols` floats; `out_class` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mmf_predict(
    handle: *const MmfCheckpoint,
    text: *const f32,
    text_rows: usize,
    text_cols: usize,
    image: *const f32,
    image_rows: usize,
    image_cols: usize,
    out_class: *mut usize,
) -> MmfStatus {
    if handle.is_null() || text.is_null() || out_class.is_null() {
        return set_error(MmfStatus::NullPointer, "handle, text, or out_class is NULL");
    }
    let text_data = std::slice::from_raw_parts(text, text_rows * text_cols).to_vec();
    let text_m = match Matrix::from_vec(text_rows, text_cols, text_data) {
        Ok(m) => m,
        Err(e) => return set_error(MmfStatus::InvalidArgument, e),
    };
    let image_m = if image.is_null() {
        None
    } else {
        let data = std::slice::from_raw_parts(image, image_rows * image_cols).to_vec();
        match Matrix::from_vec(image_rows, image_cols, data) {
            Ok(m) => Some(m),
            Err(e) => return set_error(MmfStatus::InvalidArgument, e),
        }
    };
    let result = match &(*handle).inner {
        AnyCheckpoint::Single(c) => predict_typed(c, text_m, image_m),
        AnyCheckpoint::Double(c) => predict_typed(c, text_m, image_m),
    };
    match result {
        Ok(class) => {
            *out_class = class;
            MmfStatus::Ok
        }
        Err((status, message)) => set_error(status, message),
    }
}

/// Evaluate a checkpoint on a dataset's test split under a regime,
/// returning the metrics as an owned JSON string.
///
/// # Safety
/// All pointers must be valid; free the string with `mmf_string_free`.
#[no_mangle]
pub unsafe extern "C" fn mmf_evaluate_json(
    ckpt: *const MmfCheckpoint,
    data: *const MmfDataset,
    regime: MmfRegime,
    out_json: *mut *mut c_char,
) -> MmfStatus {
    if ckpt.is_null() || data.is_null() || out_json.is_null() {
        return set_error(MmfStatus::NullPointer, "ckpt, data, or out_json is NULL");
    }
    let (_, eval_view) = regime_views(&(*data).inner, regime.into());
    let metrics = match &(*ckpt).inner {
        AnyCheckpoint::Single(c) => evaluate_checkpoint(c, &eval_view),
        AnyCheckpoint::Double(c) => evaluate_checkpoint(c, &eval_view),
    };
    match metrics {
        Ok(m) => match serde_json::to_string(&m) {
            Ok(json) => match CString::new(json) {
                Ok(s) => {
                    *out_json = s.into_raw();
                    MmfStatus::Ok
                }
                Err(e) => set_error(MmfStatus::Internal, e),
            },
            Err(e) => set_error(MmfStatus::Internal, e),
        },
        Err(e) => set_error(MmfStatus::Unsupported, e),
    }
}
