//! Drives the C entry points the way a foreign binding would.

use std::ffi::CString;
use std::os::raw::c_char;

use hyrf_ffi::{
    hyrf_compress_file, hyrf_decompress_file, hyrf_last_error, hyrf_model_free,
    hyrf_model_gaussian_count, hyrf_model_load, hyrf_model_load_bundle, hyrf_model_render,
    hyrf_version, HyrfCamera, HyrfModel, HyrfStatus,
};

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error_string() -> String {
    unsafe {
        let ptr = hyrf_last_error();
        std::ffi::CStr::from_ptr(ptr).to_string_lossy().into_owned()
    }
}

fn make_checkpoint(dir: &std::path::Path) -> std::path::PathBuf {
    let spec = hyrf::synth::SynthSpec {
        n_gaussians: 10,
        n_cameras: 2,
        width: 16,
        height: 16,
        ..Default::default()
    };
    let (_, model) = hyrf::synth::synth_scene(&spec).unwrap();
    let path = dir.join("model.ckpt");
    hyrf::io::save_checkpoint(&model, 5, &path).unwrap();
    path
}

fn test_camera() -> HyrfCamera {
    HyrfCamera {
        rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        translation: [0.0, 0.0, 4.0],
        fx: 12.0,
        fy: 12.0,
        cx: 8.0,
        cy: 8.0,
        width: 16,
        height: 16,
        near: 0.2,
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(hyrf_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn load_render_free() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = make_checkpoint(dir.path());
    let mut handle: *mut HyrfModel = std::ptr::null_mut();
    let status = unsafe { hyrf_model_load(c_path(&ckpt).as_ptr(), &mut handle) };
    assert_eq!(status, HyrfStatus::Ok, "{}", last_error_string());
    assert!(!handle.is_null());
    assert_eq!(unsafe { hyrf_model_gaussian_count(handle) }, 10);

    let cam = test_camera();
    let mut buf = vec![0f32; 16 * 16 * 3];
    let status = unsafe { hyrf_model_render(handle, &cam, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, HyrfStatus::Ok, "{}", last_error_string());
    assert!(buf.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(buf.iter().any(|v| *v > 0.0), "image should not be black");

    // The FFI render must agree with the library render.
    let (model, _) = hyrf::io::checkpoint::load_checkpoint(&ckpt).unwrap();
    let lib_cam = hyrf::camera::Camera {
        rotation: nalgebra::Matrix3::identity(),
        translation: nalgebra::Vector3::new(0.0, 0.0, 4.0),
        fx: 12.0,
        fy: 12.0,
        cx: 8.0,
        cy: 8.0,
        width: 16,
        height: 16,
        near: 0.2,
    };
    let lib_out = model
        .render(&lib_cam, &hyrf::render::RasterOptions::default())
        .unwrap();
    for (a, b) in buf.iter().zip(&lib_out.image) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }

    unsafe { hyrf_model_free(handle) };
}

#[test]
fn render_rejects_wrong_buffer_length() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = make_checkpoint(dir.path());
    let mut handle: *mut HyrfModel = std::ptr::null_mut();
    unsafe { hyrf_model_load(c_path(&ckpt).as_ptr(), &mut handle) };
    let cam = test_camera();
    let mut buf = vec![0f32; 7];
    let status = unsafe { hyrf_model_render(handle, &cam, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, HyrfStatus::InvalidArgument);
    assert!(last_error_string().contains("buffer length"));
    unsafe { hyrf_model_free(handle) };
}

#[test]
fn load_missing_file_sets_error() {
    let mut handle: *mut HyrfModel = std::ptr::null_mut();
    let path = CString::new("/nonexistent/nowhere.ckpt").unwrap();
    let status = unsafe { hyrf_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, HyrfStatus::DataError);
    assert!(handle.is_null());
    assert!(!last_error_string().is_empty());
}

#[test]
fn null_arguments_are_rejected_not_crashed() {
    let status = unsafe { hyrf_model_load(std::ptr::null(), std::ptr::null_mut()) };
    assert_eq!(status, HyrfStatus::InvalidArgument);
    unsafe { hyrf_model_free(std::ptr::null_mut()) }; // no-op
    assert_eq!(unsafe { hyrf_model_gaussian_count(std::ptr::null()) }, 0);
    let status =
        unsafe { hyrf_model_render(std::ptr::null(), std::ptr::null(), std::ptr::null_mut(), 0) };
    assert_eq!(status, HyrfStatus::InvalidArgument);
}

#[test]
fn compress_decompress_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = make_checkpoint(dir.path());
    let bundle = dir.path().join("model.hyrf");
    let restored = dir.path().join("restored.ckpt");

    let status = unsafe { hyrf_compress_file(c_path(&ckpt).as_ptr(), c_path(&bundle).as_ptr()) };
    assert_eq!(status, HyrfStatus::Ok, "{}", last_error_string());
    let header = std::fs::read(&bundle).unwrap();
    assert_eq!(&header[..4], b"HYRF");

    let status =
        unsafe { hyrf_decompress_file(c_path(&bundle).as_ptr(), c_path(&restored).as_ptr()) };
    assert_eq!(status, HyrfStatus::Ok, "{}", last_error_string());

    // Bundles load directly as well.
    let mut handle: *mut HyrfModel = std::ptr::null_mut();
    let status = unsafe { hyrf_model_load_bundle(c_path(&bundle).as_ptr(), &mut handle) };
    assert_eq!(status, HyrfStatus::Ok, "{}", last_error_string());
    assert_eq!(unsafe { hyrf_model_gaussian_count(handle) }, 10);
    unsafe { hyrf_model_free(handle) };

    // The corrupt path reports DataError.
    std::fs::write(&bundle, b"garbage").unwrap();
    let mut handle: *mut HyrfModel = std::ptr::null_mut();
    let status = unsafe { hyrf_model_load_bundle(c_path(&bundle).as_ptr(), &mut handle) };
    assert_eq!(status, HyrfStatus::DataError);
}

#[test]
fn header_exists_and_exports_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hyrf.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header missing");
    for symbol in [
        "hyrf_model_load",
        "hyrf_model_render",
        "hyrf_model_free",
        "hyrf_compress_file",
        "hyrf_decompress_file",
        "hyrf_last_error",
        "HyrfCamera",
        "HyrfStatus",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}

// Keep the unused-import lint honest about the c_char re-export used in docs.
#[allow(dead_code)]
fn _uses_c_char(_: *const c_char) {}
