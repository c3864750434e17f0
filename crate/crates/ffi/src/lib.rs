//! C interface to the change-detection network.
//!
//! Every fallible call returns an [`EffcdStatus`]. On failure the message is
//! kept per thread and can be read with [`effcd_last_error`]. Models live
//! behind an opaque [`EffcdModel`] handle released with [`effcd_model_free`].
//! Images cross the boundary as interleaved 8-bit RGB, row-major, and masks
//! as one byte per pixel holding 0 or 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use effcd::app::{load_checkpoint, sliding_window_logits};
use effcd::config::ModelConfig;
use effcd::datapipe::{chip_grid, BinaryMask, Raster};
use effcd::model::Network;
use effcd::objective::{confusion_matrix, ConfusionMatrix};
use effcd::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EffcdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    Checkpoint = 7,
    Numerical = 8,
    Panic = 9,
}

impl EffcdStatus {
    fn of(err: &Error) -> Self {
        match err {
            Error::Shape { .. } | Error::Extent(_) => Self::Shape,
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::MissingFile(_) | Error::Io(_) => Self::Io,
            Error::Format { .. } => Self::Format,
            Error::Config(_) => Self::Config,
            Error::Checkpoint(_) => Self::Checkpoint,
            Error::Sample { source, .. } => Self::of(source),
            Error::Numerical(_) | Error::NonScalarLoss(_) | Error::MissingGradient(_) | Error::NonFiniteLoss { .. } => {
                Self::Numerical
            }
        }
    }
}

/// Loaded network. Not safe to share between threads without locking.
pub struct EffcdModel {
    net: Network<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EffcdConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Bits of [`EffcdMetrics::undefined`].
pub const EFFCD_UNDEFINED_IOU: u32 = 1;
pub const EFFCD_UNDEFINED_F1: u32 = 2;
pub const EFFCD_UNDEFINED_REC: u32 = 4;
pub const EFFCD_UNDEFINED_PREC: u32 = 8;

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EffcdMetrics {
    pub oa: f64,
    pub iou: f64,
    pub f1: f64,
    pub rec: f64,
    pub prec: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    pub undefined: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EffcdTileGrid {
    pub count: usize,
    pub stride: usize,
    pub padded_width: usize,
    pub padded_height: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EffcdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(EffcdStatus::of(&e), e.to_string())
    }
}

fn fail(status: EffcdStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EffcdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EffcdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            EffcdStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(EffcdStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn utf8<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(s, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(EffcdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn pixels(width: usize, height: usize, channels: usize) -> Result<usize, Failure> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(EffcdStatus::InvalidArgument, format!("bad extent {width}x{height}")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn effcd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn effcd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Freshly initialized network for a named preset (`"nano"`, `"b0"`..`"b5"`).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn effcd_model_new(preset: *const c_char, seed: u64, out: *mut *mut EffcdModel) -> EffcdStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = ModelConfig::preset(utf8(preset, "preset")?)?;
        let net = Network::new(&cfg, seed)?;
        *out = Box::into_raw(Box::new(EffcdModel { net }));
        Ok(())
    })
}

/// Loads a checkpoint directory written by the training command.
///
/// # Safety
/// `dir` must be a NUL-terminated path and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn effcd_model_load(dir: *const c_char, out: *mut *mut EffcdModel) -> EffcdStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = utf8(dir, "dir")?;
        let ck = load_checkpoint(Path::new(dir), None)?;
        *out = Box::into_raw(Box::new(EffcdModel { net: ck.network }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn effcd_model_free(model: *mut EffcdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn effcd_model_parameter_count(model: *const EffcdModel, out: *mut usize) -> EffcdStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).net.parameter_count();
        Ok(())
    })
}

/// Sliding-window change prediction for one image pair.
///
/// `logits_out` receives `width*height` floats and `mask_out` the same
/// number of 0/1 bytes; either may be null. `windows_out`, when not null,
/// receives the number of network evaluations.
///
/// # Safety
/// `image_a` and `image_b` must each hold `width*height*3` bytes, and the
/// non-null outputs must have room for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn effcd_predict(
    model: *mut EffcdModel,
    image_a: *const u8,
    image_b: *const u8,
    width: usize,
    height: usize,
    window: usize,
    stride: usize,
    logits_out: *mut f32,
    mask_out: *mut u8,
    windows_out: *mut usize,
) -> EffcdStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(image_a, "image_a")?;
        non_null(image_b, "image_b")?;
        let n = pixels(width, height, 3)?;
        let a = Raster::from_vec(width, height, 3, slice::from_raw_parts(image_a, n).to_vec())?;
        let b = Raster::from_vec(width, height, 3, slice::from_raw_parts(image_b, n).to_vec())?;
        let inf = sliding_window_logits(&mut (*model).net, &a, &b, window, stride)?;
        let count = width * height;
        if !logits_out.is_null() {
            slice::from_raw_parts_mut(logits_out, count).copy_from_slice(inf.logits.data());
        }
        if !mask_out.is_null() {
            let mask = BinaryMask::from_logits(&inf.logits);
            slice::from_raw_parts_mut(mask_out, count).copy_from_slice(mask.data());
        }
        if !windows_out.is_null() {
            *windows_out = inf.windows;
        }
        Ok(())
    })
}

/// Pixel counts of a predicted mask against a label, both `len` bytes of 0/1.
///
/// # Safety
/// `pred` and `label` must hold `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effcd_confusion(
    pred: *const u8,
    label: *const u8,
    len: usize,
    out: *mut EffcdConfusion,
) -> EffcdStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(label, "label")?;
        non_null(out, "out")?;
        pixels(len, 1, 1)?;
        let p = BinaryMask::from_vec(len, 1, slice::from_raw_parts(pred, len).to_vec())?;
        let l = BinaryMask::from_vec(len, 1, slice::from_raw_parts(label, len).to_vec())?;
        let cm = confusion_matrix(&p, &l)?;
        *out = EffcdConfusion {
            tp: cm.tp,
            fp: cm.fp,
            fn_: cm.fn_,
            tn: cm.tn,
        };
        Ok(())
    })
}

/// OA, IoU, F1, recall and precision of accumulated counts.
///
/// # Safety
/// `counts` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn effcd_metrics(counts: *const EffcdConfusion, out: *mut EffcdMetrics) -> EffcdStatus {
    guard(|| {
        non_null(counts, "counts")?;
        non_null(out, "out")?;
        let c = *counts;
        let r = ConfusionMatrix {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
        }
        .metrics()?;
        let u = r.undefined;
        *out = EffcdMetrics {
            oa: r.oa,
            iou: r.iou,
            f1: r.f1,
            rec: r.rec,
            prec: r.prec,
            undefined: [
                (u.iou, EFFCD_UNDEFINED_IOU),
                (u.f1, EFFCD_UNDEFINED_F1),
                (u.rec, EFFCD_UNDEFINED_REC),
                (u.prec, EFFCD_UNDEFINED_PREC),
            ]
            .iter()
            .filter(|(set, _)| *set)
            .fold(0, |acc, (_, bit)| acc | bit),
        };
        Ok(())
    })
}

/// Tile layout for chipping a `width`×`height` image.
///
/// `grid_out` is always filled. With `origins_out` non-null, the row-major
/// tile offsets are written as `x0, y0, x1, y1, ...`, which needs
/// `2*count <= capacity`; call once with null to learn `count`.
///
/// # Safety
/// `grid_out` must be writable and `origins_out`, if not null, must hold
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn effcd_chip_grid(
    width: usize,
    height: usize,
    patch: usize,
    overlap: usize,
    grid_out: *mut EffcdTileGrid,
    origins_out: *mut usize,
    capacity: usize,
) -> EffcdStatus {
    guard(|| {
        non_null(grid_out, "grid_out")?;
        let g = chip_grid(width, height, patch, overlap)?;
        *grid_out = EffcdTileGrid {
            count: g.len(),
            stride: g.stride,
            padded_width: g.padded_w,
            padded_height: g.padded_h,
        };
        if !origins_out.is_null() {
            if capacity < 2 * g.len() {
                return Err(fail(
                    EffcdStatus::InvalidArgument,
                    format!("origins buffer holds {capacity} values, needs {}", 2 * g.len()),
                ));
            }
            let out = slice::from_raw_parts_mut(origins_out, 2 * g.len());
            for (dst, &(x, y)) in out.chunks_exact_mut(2).zip(&g.origins) {
                dst[0] = x;
                dst[1] = y;
            }
        }
        Ok(())
    })
}
