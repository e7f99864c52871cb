//! C ABI over the spfnet library.
//!
//! Every fallible call returns a [`SpfnetStatus`]; on failure the message is
//! available from [`spfnet_last_error`] on the same thread. Images are planar
//! `float` buffers in channel, row, column order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spfnet::io::checkpoint::load_checkpoint;
use spfnet::io::{load_pfm, save_pfm};
use spfnet::model::{Model, ModelConfig, ModelInputs, Variant};
use spfnet::{Error, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpfnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Format = 4,
    Io = 5,
    CheckpointMismatch = 6,
    Internal = 7,
}

/// Opaque model handle.
pub struct SpfnetModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SpfnetStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => SpfnetStatus::ShapeMismatch,
        Error::Format { .. } | Error::Json(_) => SpfnetStatus::Format,
        Error::Io { .. } => SpfnetStatus::Io,
        Error::CheckpointMismatch(_) | Error::MissingParam(_) => SpfnetStatus::CheckpointMismatch,
        Error::InvalidConfig { .. } | Error::UnsupportedScale(_) | Error::Unknown { .. } => SpfnetStatus::InvalidArgument,
        _ => SpfnetStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SpfnetStatus, String)>) -> SpfnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpfnetStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SpfnetStatus::Internal
        }
    }
}

fn lift<T>(r: spfnet::Result<T>) -> Result<T, (SpfnetStatus, String)> {
    r.map_err(|e| (status_of(&e), format!("{}: {e}", e.kind())))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, (SpfnetStatus, String)> {
    if p.is_null() {
        return Err((SpfnetStatus::NullPointer, "null path".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SpfnetStatus::InvalidArgument, "path is not UTF-8".into()))
}

fn null(what: &str) -> (SpfnetStatus, String) {
    (SpfnetStatus::NullPointer, format!("null {what}"))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn spfnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds an untrained model. `variant` is "spfnet" or "spfnet-t"; `scale`
/// one of 2, 4, 8, 16. A fresh model returns the bicubic upsampling.
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spfnet_model_new(
    variant: *const c_char,
    scale: u32,
    seed: u64,
    out: *mut *mut SpfnetModel,
) -> SpfnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = path_arg(variant)?;
        let v = Variant::parse(name).ok_or((SpfnetStatus::InvalidArgument, format!("unknown variant `{name}`")))?;
        let cfg = ModelConfig::preset(v, scale as usize);
        let model = lift(Model::<f32>::build(&cfg, seed))?;
        *out = Box::into_raw(Box::new(SpfnetModel { model }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spfnet_model_load(path: *const c_char, out: *mut *mut SpfnetModel) -> SpfnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_arg(path)?;
        let model = lift(load_checkpoint(p, None).and_then(|c| c.model()))?;
        *out = Box::into_raw(Box::new(SpfnetModel { model }));
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spfnet_model_free(model: *mut SpfnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upsampling factor of the model, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spfnet_model_scale(model: *const SpfnetModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.config.scale as u32)
}

/// Number of scalar parameters, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spfnet_model_param_count(model: *const SpfnetModel) -> u64 {
    model.as_ref().map_or(0, |m| m.model.count_params() as u64)
}

/// Super-resolves one sample. With `s` the model scale, `depth_lr` holds
/// `h*w` values in centimetres; `rgb` and `normal` hold `3*(s*h)*(s*w)`;
/// `semantic` and `out` hold `(s*h)*(s*w)`.
///
/// # Safety
/// All buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn spfnet_model_infer(
    model: *const SpfnetModel,
    depth_lr: *const f32,
    height: usize,
    width: usize,
    rgb: *const f32,
    normal: *const f32,
    semantic: *const f32,
    out: *mut f32,
) -> SpfnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        for (p, n) in [(depth_lr, "depth_lr"), (rgb, "rgb"), (normal, "normal"), (semantic, "semantic")] {
            if p.is_null() {
                return Err(null(n));
            }
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if height == 0 || width == 0 {
            return Err((SpfnetStatus::InvalidArgument, "empty image".into()));
        }
        let s = m.model.config.scale;
        let (hh, ww) = (height * s, width * s);
        let t = |p: *const f32, c: usize, h: usize, w: usize| {
            lift(Tensor::new(vec![1, c, h, w], std::slice::from_raw_parts(p, c * h * w).to_vec()))
        };
        let x = ModelInputs {
            depth_lr: t(depth_lr, 1, height, width)?,
            rgb: t(rgb, 3, hh, ww)?,
            normal: t(normal, 3, hh, ww)?,
            semantic: t(semantic, 1, hh, ww)?,
        };
        let y = lift(m.model.predict(&x))?;
        std::slice::from_raw_parts_mut(out, hh * ww).copy_from_slice(y.data());
        Ok(())
    })
}

/// Reads a PFM file into a new buffer of `channels*height*width` floats,
/// released with [`spfnet_buffer_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn spfnet_pfm_read(
    path: *const c_char,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    data: *mut *mut f32,
) -> SpfnetStatus {
    guard(|| {
        if channels.is_null() || height.is_null() || width.is_null() || data.is_null() {
            return Err(null("output pointer"));
        }
        let img = lift(load_pfm(path_arg(path)?))?;
        let (_, c, h, w) = lift(img.dims4())?;
        let buf: Box<[f32]> = img.into_data().into_boxed_slice();
        *channels = c;
        *height = h;
        *width = w;
        *data = Box::into_raw(buf) as *mut f32;
        Ok(())
    })
}

/// Writes a 1- or 3-channel planar image as PFM.
///
/// # Safety
/// `data` must hold `channels*height*width` floats.
#[no_mangle]
pub unsafe extern "C" fn spfnet_pfm_write(
    path: *const c_char,
    data: *const f32,
    channels: usize,
    height: usize,
    width: usize,
) -> SpfnetStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let p = path_arg(path)?;
        let n = channels * height * width;
        let img = lift(Tensor::new(vec![1, channels, height, width], std::slice::from_raw_parts(data, n).to_vec()))?;
        lift(save_pfm(p, &img))
    })
}

/// Frees a buffer returned by [`spfnet_pfm_read`]; `len` is its element count.
///
/// # Safety
/// `data` and `len` must come from the same read call.
#[no_mangle]
pub unsafe extern "C" fn spfnet_buffer_free(data: *mut f32, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}
