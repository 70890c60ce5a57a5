//! C ABI over the hyrf library. Models are opaque handles; every call
//! returns a status code and the last error message is retrievable per
//! thread. Buffers are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};

use hyrf::camera::Camera;
use hyrf::codec::{compress_model, decompress_model};
use hyrf::config::CodecConfig;
use hyrf::io::checkpoint::{load_checkpoint, save_checkpoint};
use hyrf::model::Model;
use hyrf::render::RasterOptions;

/// Status codes mirrored from the library's error classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyrfStatus {
    Ok = 0,
    /// A pointer or argument violated this API's contract.
    InvalidArgument = 1,
    /// Unreadable, unparsable or corrupt data.
    DataError = 2,
    /// Numeric divergence inside the library.
    Divergence = 3,
    /// A panic was caught at the boundary; state may be inconsistent.
    Internal = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &hyrf::Error) -> HyrfStatus {
    match err.exit_code() {
        3 => HyrfStatus::Divergence,
        2 => HyrfStatus::DataError,
        _ => HyrfStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (HyrfStatus, String)>) -> HyrfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HyrfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic across the FFI boundary");
            HyrfStatus::Internal
        }
    }
}

/// An opaque loaded model.
pub struct HyrfModel {
    model: Model,
    iteration: u64,
}

/// Pinhole camera description. `rotation` is row-major world-to-camera;
/// `p_cam = R p + t` with +z forward and y down.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HyrfCamera {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

fn camera_from_c(c: &HyrfCamera) -> Camera {
    Camera {
        rotation: Matrix3::from_row_slice(&c.rotation),
        translation: Vector3::new(c.translation[0], c.translation[1], c.translation[2]),
        fx: c.fx,
        fy: c.fy,
        cx: c.cx,
        cy: c.cy,
        width: c.width as usize,
        height: c.height as usize,
        near: c.near,
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, (HyrfStatus, String)> {
    if ptr.is_null() {
        return Err((HyrfStatus::InvalidArgument, "null path".into()));
    }
    let s = CStr::from_ptr(ptr).to_str().map_err(|_| {
        (
            HyrfStatus::InvalidArgument,
            "path is not valid UTF-8".into(),
        )
    })?;
    Ok(PathBuf::from(s))
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hyrf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn hyrf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer; the
/// returned handle must be released with [`hyrf_model_free`].
#[no_mangle]
pub unsafe extern "C" fn hyrf_model_load(
    path: *const c_char,
    out: *mut *mut HyrfModel,
) -> HyrfStatus {
    guard(|| {
        if out.is_null() {
            return Err((HyrfStatus::InvalidArgument, "null output handle".into()));
        }
        let path = path_arg(path)?;
        let (model, iteration) =
            load_checkpoint(&path).map_err(|e| (status_of(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(HyrfModel { model, iteration }));
        Ok(())
    })
}

/// Loads a compressed bundle into a new model handle.
///
/// # Safety
/// Same contract as [`hyrf_model_load`].
#[no_mangle]
pub unsafe extern "C" fn hyrf_model_load_bundle(
    path: *const c_char,
    out: *mut *mut HyrfModel,
) -> HyrfStatus {
    guard(|| {
        if out.is_null() {
            return Err((HyrfStatus::InvalidArgument, "null output handle".into()));
        }
        let path = path_arg(path)?;
        let data = std::fs::read(&path)
            .map_err(|e| (HyrfStatus::DataError, format!("{}: {e}", path.display())))?;
        let (model, iteration) =
            decompress_model(&data).map_err(|e| (status_of(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(HyrfModel { model, iteration }));
        Ok(())
    })
}

/// Releases a model handle. A null pointer is a no-op.
///
/// # Safety
/// `model` must have come from one of the load functions and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn hyrf_model_free(model: *mut HyrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of explicit Gaussians in the model; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hyrf_model_gaussian_count(model: *const HyrfModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).model.gaussians.len() as u64
}

/// Training iteration recorded in the loaded checkpoint or bundle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hyrf_model_iteration(model: *const HyrfModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).iteration
}

/// Renders one view into a caller-allocated RGB f32 buffer of length
/// `width * height * 3`, values in [0, 1], row-major.
///
/// # Safety
/// `model` and `camera` must be valid; `out_rgb` must point to at least
/// `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn hyrf_model_render(
    model: *const HyrfModel,
    camera: *const HyrfCamera,
    out_rgb: *mut f32,
    out_len: usize,
) -> HyrfStatus {
    guard(|| {
        if model.is_null() || camera.is_null() || out_rgb.is_null() {
            return Err((HyrfStatus::InvalidArgument, "null argument".into()));
        }
        let cam = camera_from_c(&*camera);
        let need = cam.width * cam.height * 3;
        if out_len != need {
            return Err((
                HyrfStatus::InvalidArgument,
                format!("buffer length {out_len} != width*height*3 = {need}"),
            ));
        }
        let output = (*model)
            .model
            .render(&cam, &RasterOptions::default())
            .map_err(|e| (status_of(&e), e.to_string()))?;
        let dst = std::slice::from_raw_parts_mut(out_rgb, out_len);
        for (d, s) in dst.iter_mut().zip(&output.image) {
            *d = *s as f32;
        }
        Ok(())
    })
}

/// Compresses a checkpoint file into a bundle file with default codec
/// settings.
///
/// # Safety
/// Both paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hyrf_compress_file(
    checkpoint_path: *const c_char,
    bundle_path: *const c_char,
) -> HyrfStatus {
    guard(|| {
        let src = path_arg(checkpoint_path)?;
        let dst = path_arg(bundle_path)?;
        let (model, iteration) =
            load_checkpoint(&src).map_err(|e| (status_of(&e), e.to_string()))?;
        let bundle = compress_model(&model, iteration, &CodecConfig::default())
            .map_err(|e| (status_of(&e), e.to_string()))?;
        std::fs::write(&dst, bundle)
            .map_err(|e| (HyrfStatus::DataError, format!("{}: {e}", dst.display())))?;
        Ok(())
    })
}

/// Expands a bundle file back into a render-ready checkpoint file.
///
/// # Safety
/// Both paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hyrf_decompress_file(
    bundle_path: *const c_char,
    checkpoint_path: *const c_char,
) -> HyrfStatus {
    guard(|| {
        let src = path_arg(bundle_path)?;
        let dst = path_arg(checkpoint_path)?;
        let data = std::fs::read(&src)
            .map_err(|e| (HyrfStatus::DataError, format!("{}: {e}", src.display())))?;
        let (model, iteration) =
            decompress_model(&data).map_err(|e| (status_of(&e), e.to_string()))?;
        save_checkpoint(&model, iteration, &dst).map_err(|e| (status_of(&e), e.to_string()))?;
        Ok(())
    })
}
