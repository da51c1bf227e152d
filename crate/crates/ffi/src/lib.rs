//! C ABI for `pqd-core`.
//!
//! Every fallible function returns a [`PqdStatus`]. On failure a message is
//! kept per thread and can be read with [`pqd_last_error_message`]. Models
//! are opaque [`PqdModel`] handles owned by the caller until passed to
//! [`pqd_model_free`]. No function panics across the boundary; a caught
//! panic is reported as `PQD_STATUS_PANIC`.
//!
//! The header `include/pqd.h` is regenerated by `build.rs` via cbindgen.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pqd_core::imaging::{render_record, RgbImage};
use pqd_core::model::{load_checkpoint, Gsresnet};
use pqd_core::signal::generate_record;
use pqd_core::stransform::record_amplitude;
use pqd_core::train::predict_image;
use pqd_core::{DisturbanceClass, Error, TimeBase};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or malformed.
    InvalidArgument = 2,
    /// The output buffer is too small; the required length was still written.
    BufferTooSmall = 3,
    Io = 4,
    /// A file was read but its contents are not valid.
    Format = 5,
    Shape = 6,
    Panic = 7,
}

/// A loaded classifier checkpoint.
pub struct PqdModel {
    model: Gsresnet<f32>,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> PqdStatus {
    match e {
        Error::Io { .. } => PqdStatus::Io,
        Error::Json { .. } | Error::PngDecode { .. } | Error::PngEncode { .. } | Error::Checkpoint { .. } => {
            PqdStatus::Format
        }
        Error::Shape(_) | Error::NotPowerOfTwo(_) => PqdStatus::Shape,
        _ => PqdStatus::InvalidArgument,
    }
}

struct Fail(PqdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: PqdStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Run `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PqdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PqdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PqdStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        fail(PqdStatus::NullPointer, format!("{name} is null"))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    non_null(p, name)?;
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(PqdStatus::InvalidArgument, format!("{name} is not valid UTF-8")),
    }
}

unsafe fn samples_arg<'a>(p: *const f64, n: usize) -> Result<&'a [f64], Fail> {
    non_null(p, "samples")?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copy `src` into `(dst, cap)`, reporting the needed length through `len`.
unsafe fn write_out<T: Copy>(src: &[T], dst: *mut T, cap: usize, len: *mut usize) -> Result<(), Fail> {
    if !len.is_null() {
        *len = src.len();
    }
    if src.len() > cap {
        return fail(
            PqdStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        );
    }
    non_null(dst, "output buffer")?;
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pqd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread, or null after a
/// successful call. Valid until the next `pqd_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pqd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of disturbance classes.
#[no_mangle]
pub extern "C" fn pqd_class_count() -> usize {
    DisturbanceClass::COUNT
}

static LABELS: [&str; 18] = [
    "V1\0", "V2\0", "V3\0", "V4\0", "V5\0", "V6\0", "V7\0", "V8\0", "V9\0", "V10\0", "V11\0", "V12\0", "V13\0",
    "V14\0", "V15\0", "V16\0", "V17\0", "V18\0",
];

/// Static label (`"V1"`..`"V18"`) of class `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn pqd_class_label(index: usize) -> *const c_char {
    LABELS.get(index).map_or(ptr::null(), |s| s.as_ptr().cast())
}

/// Samples in one record at the default time base.
#[no_mangle]
pub extern "C" fn pqd_record_len() -> usize {
    TimeBase::default().n_samples()
}

/// Synthesize record `record_index` of class `class_index` on the default
/// time base, identical to the one `pqd generate` writes for the same seed.
/// `snr_db` is NaN or +infinity for a noiseless record.
#[no_mangle]
pub unsafe extern "C" fn pqd_synthesize(
    class_index: usize,
    record_index: u64,
    seed: u64,
    snr_db: f64,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> PqdStatus {
    guard(|| {
        let Some(class) = DisturbanceClass::from_index(class_index) else {
            return fail(PqdStatus::InvalidArgument, format!("class index {class_index} out of range"));
        };
        let snr = if snr_db.is_nan() || snr_db == f64::INFINITY {
            None
        } else if snr_db.is_finite() {
            Some(snr_db)
        } else {
            return fail(PqdStatus::InvalidArgument, "snr_db must be finite, NaN or +inf");
        };
        let w = generate_record(class, record_index as usize, snr, &TimeBase::default(), seed)?;
        write_out(&w.samples, out, out_len, written)
    })
}

/// S-Transform amplitude of a record, zero-padded to the next power of two
/// and cropped back to `n` columns. Writes a row-major `rows x cols` matrix
/// with `rows = padded / 2 + 1` (row 0 is DC) and `cols = n`. Call with
/// `out = NULL, out_len = 0` to query the shape first.
#[no_mangle]
pub unsafe extern "C" fn pqd_st_amplitude(
    samples: *const f64,
    n: usize,
    sample_rate: f64,
    out: *mut f64,
    out_len: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> PqdStatus {
    guard(|| {
        if n < 2 {
            return fail(PqdStatus::InvalidArgument, "need at least 2 samples");
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return fail(PqdStatus::InvalidArgument, "sample_rate must be positive");
        }
        if !rows.is_null() {
            *rows = n.next_power_of_two() / 2 + 1;
        }
        if !cols.is_null() {
            *cols = n;
        }
        let needed = (n.next_power_of_two() / 2 + 1) * n;
        if out.is_null() && out_len == 0 {
            return fail(PqdStatus::BufferTooSmall, format!("{needed} values needed"));
        }
        let x = samples_arg(samples, n)?;
        if out_len < needed {
            return fail(
                PqdStatus::BufferTooSmall,
                format!("buffer holds {out_len} values, {needed} needed"),
            );
        }
        let a = record_amplitude(x, sample_rate)?;
        write_out(&a.data, out, out_len, ptr::null_mut())
    })
}

/// Render a record to a `px x px` jet-colormapped S-Transform PNG, the same
/// image `pqd render` produces.
#[no_mangle]
pub unsafe extern "C" fn pqd_render_png(
    samples: *const f64,
    n: usize,
    sample_rate: f64,
    px: usize,
    path: *const c_char,
) -> PqdStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let x = samples_arg(samples, n)?;
        if px == 0 {
            return fail(PqdStatus::InvalidArgument, "px must be positive");
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return fail(PqdStatus::InvalidArgument, "sample_rate must be positive");
        }
        render_record(x, sample_rate, px)?.write_png(&path)?;
        Ok(())
    })
}

/// Load a checkpoint directory into a new handle stored in `*out`.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_load(dir: *const c_char, out: *mut *mut PqdModel) -> PqdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let (model, meta) = load_checkpoint::<f32>(&dir)?;
        let mut labels: Vec<String> = meta.class_labels;
        let classes = model.config().num_classes;
        for i in labels.len()..classes {
            labels.push(
                DisturbanceClass::from_index(i).map_or_else(|| format!("class{i}"), |c| c.label().to_string()),
            );
        }
        let labels = labels
            .into_iter()
            .map(|l| CString::new(l.replace('\0', " ")).expect("NUL bytes were replaced"))
            .collect();
        *out = Box::into_raw(Box::new(PqdModel { model, labels }));
        Ok(())
    })
}

/// Release a handle from [`pqd_model_load`]. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_free(model: *mut PqdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length in pixels the model expects, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_input_px(model: *const PqdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().input_px)
}

/// Number of model outputs, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_num_classes(model: *const PqdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().num_classes)
}

/// Label of output `index`, or null. Owned by the handle.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_class_label(model: *const PqdModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.labels.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

unsafe fn predict_into(
    m: &PqdModel,
    image: &RgbImage,
    probs: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> Result<(), Fail> {
    let p = predict_image(&m.model, image, &[])?;
    if !probs.is_null() || probs_len > 0 {
        write_out(&p.confidences, probs, probs_len, ptr::null_mut())?;
    }
    if !class_out.is_null() {
        *class_out = p.class_index;
    }
    Ok(())
}

/// Classify a PNG file. `probs` (optional, length `num_classes`) receives
/// softmax confidences; `class_out` (optional) the arg-max index.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_predict_png(
    model: *const PqdModel,
    path: *const c_char,
    probs: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> PqdStatus {
    guard(|| {
        non_null(model, "model")?;
        let path = path_arg(path, "path")?;
        let image = RgbImage::read_png(&path)?;
        predict_into(&*model, &image, probs, probs_len, class_out)
    })
}

/// Classify interleaved 8-bit RGB pixels, row-major from the top row,
/// `height * width * 3` bytes. Images of another size are resized.
#[no_mangle]
pub unsafe extern "C" fn pqd_model_predict_rgb(
    model: *const PqdModel,
    pixels: *const u8,
    height: usize,
    width: usize,
    probs: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> PqdStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(pixels, "pixels")?;
        let Some(len) = height.checked_mul(width).and_then(|v| v.checked_mul(3)) else {
            return fail(PqdStatus::InvalidArgument, "image size overflows");
        };
        let image = RgbImage::new(height, width, std::slice::from_raw_parts(pixels, len).to_vec())?;
        predict_into(&*model, &image, probs, probs_len, class_out)
    })
}
