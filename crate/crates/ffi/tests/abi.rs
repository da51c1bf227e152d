use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pqd_core::imaging::{render_waveform, RgbImage};
use pqd_core::model::{save_checkpoint, CheckpointMeta, Gsresnet, ModelConfig};
use pqd_core::signal::generate_dataset;
use pqd_core::stransform::{amplitude, forward_st};
use pqd_core::train::predict_image;
use pqd_core::{DisturbanceClass, TimeBase};
use pqd_ffi::*;

fn last_error() -> Option<String> {
    let p = pqd_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn labels_and_version() {
    assert_eq!(pqd_class_count(), 18);
    for c in DisturbanceClass::ALL {
        let label = unsafe { CStr::from_ptr(pqd_class_label(c.index())) };
        assert_eq!(label.to_str().unwrap(), c.label());
    }
    assert!(pqd_class_label(18).is_null());
    let v = unsafe { CStr::from_ptr(pqd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    assert_eq!(pqd_record_len(), 640);
}

#[test]
fn synthesize_matches_dataset_generation() {
    let tb = TimeBase::default();
    for snr in [None, Some(25.0)] {
        let set = generate_dataset(&[DisturbanceClass::V13], 3, snr, &tb, 9).unwrap();
        let mut out = vec![0.0; 640];
        let mut written = 0;
        let s = unsafe {
            pqd_synthesize(12, 2, 9, snr.unwrap_or(f64::NAN), out.as_mut_ptr(), out.len(), &mut written)
        };
        assert_eq!(s, PqdStatus::Ok);
        assert_eq!(written, 640);
        assert_eq!(out, set[2].samples);
        assert!(last_error().is_none());
    }
}

#[test]
fn synthesize_reports_bad_arguments() {
    let mut out = vec![0.0; 10];
    let mut written = 0;
    let s = unsafe { pqd_synthesize(0, 0, 1, f64::NAN, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, PqdStatus::BufferTooSmall);
    assert_eq!(written, 640);
    assert!(last_error().unwrap().contains("640"));

    let s = unsafe { pqd_synthesize(18, 0, 1, f64::NAN, out.as_mut_ptr(), out.len(), ptr::null_mut()) };
    assert_eq!(s, PqdStatus::InvalidArgument);
    let s = unsafe { pqd_synthesize(0, 0, 1, f64::NEG_INFINITY, out.as_mut_ptr(), 640, ptr::null_mut()) };
    assert_eq!(s, PqdStatus::InvalidArgument);
    let s = unsafe { pqd_synthesize(0, 0, 1, f64::NAN, ptr::null_mut(), 640, ptr::null_mut()) };
    assert_eq!(s, PqdStatus::NullPointer);
}

#[test]
fn amplitude_matches_core_transform() {
    let w = &generate_dataset(&[DisturbanceClass::V4], 1, None, &TimeBase::default(), 3).unwrap()[0];
    let (mut rows, mut cols) = (0, 0);
    let s = unsafe { pqd_st_amplitude(w.samples.as_ptr(), 640, 3200.0, ptr::null_mut(), 0, &mut rows, &mut cols) };
    assert_eq!(s, PqdStatus::BufferTooSmall);
    assert_eq!((rows, cols), (513, 640));

    let mut out = vec![0.0; rows * cols];
    let s = unsafe { pqd_st_amplitude(w.samples.as_ptr(), 640, 3200.0, out.as_mut_ptr(), out.len(), &mut rows, &mut cols) };
    assert_eq!(s, PqdStatus::Ok);
    let st = forward_st(w).unwrap();
    let expected = amplitude(&st).crop_cols(640);
    assert_eq!(out, expected.data);

    let s = unsafe { pqd_st_amplitude(w.samples.as_ptr(), 1, 3200.0, out.as_mut_ptr(), out.len(), &mut rows, &mut cols) };
    assert_eq!(s, PqdStatus::InvalidArgument);
    let s = unsafe { pqd_st_amplitude(ptr::null(), 640, 3200.0, out.as_mut_ptr(), out.len(), &mut rows, &mut cols) };
    assert_eq!(s, PqdStatus::NullPointer);
}

#[test]
fn render_png_matches_core_renderer() {
    let dir = tempfile::tempdir().unwrap();
    let w = &generate_dataset(&[DisturbanceClass::V9], 1, Some(30.0), &TimeBase::default(), 5).unwrap()[0];
    let path = dir.path().join("x.png");
    let s = unsafe { pqd_render_png(w.samples.as_ptr(), 640, 3200.0, 24, cstr(&path).as_ptr()) };
    assert_eq!(s, PqdStatus::Ok);
    assert_eq!(RgbImage::read_png(&path).unwrap(), render_waveform(w, 24).unwrap());

    let bad = dir.path().join("missing/dir/x.png");
    let s = unsafe { pqd_render_png(w.samples.as_ptr(), 640, 3200.0, 24, cstr(&bad).as_ptr()) };
    assert_eq!(s, PqdStatus::Io);
}

fn tiny_checkpoint(dir: &Path) -> Gsresnet<f32> {
    let model = Gsresnet::<f32>::build(&ModelConfig::tiny(), 11).unwrap();
    let meta = CheckpointMeta {
        seed: Some(11),
        split_ratio: Some(0.7),
        epochs_trained: 0,
        class_labels: vec!["a".into(), "b".into(), "c".into()],
    };
    save_checkpoint(&model, &meta, dir).unwrap();
    model
}

#[test]
fn model_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let reference = tiny_checkpoint(dir.path());
    let mut handle: *mut PqdModel = ptr::null_mut();
    assert_eq!(unsafe { pqd_model_load(cstr(dir.path()).as_ptr(), &mut handle) }, PqdStatus::Ok);
    assert!(!handle.is_null());
    unsafe {
        assert_eq!(pqd_model_input_px(handle), 8);
        assert_eq!(pqd_model_num_classes(handle), 3);
        assert_eq!(CStr::from_ptr(pqd_model_class_label(handle, 1)).to_str().unwrap(), "b");
        assert!(pqd_model_class_label(handle, 3).is_null());
    }

    let img = RgbImage::new(10, 12, (0..360).map(|i| (i * 13 % 251) as u8).collect()).unwrap();
    let expected = predict_image(&reference, &img, &[]).unwrap();
    let mut probs = vec![0.0; 3];
    let mut class = usize::MAX;
    let s = unsafe { pqd_model_predict_rgb(handle, img.pixels.as_ptr(), 10, 12, probs.as_mut_ptr(), 3, &mut class) };
    assert_eq!(s, PqdStatus::Ok);
    assert_eq!(probs, expected.confidences);
    assert_eq!(class, expected.class_index);

    let png = dir.path().join("img.png");
    img.write_png(&png).unwrap();
    let mut probs2 = vec![0.0; 3];
    let s = unsafe { pqd_model_predict_png(handle, cstr(&png).as_ptr(), probs2.as_mut_ptr(), 3, ptr::null_mut()) };
    assert_eq!(s, PqdStatus::Ok);
    assert_eq!(probs2, probs);

    let s = unsafe { pqd_model_predict_rgb(handle, img.pixels.as_ptr(), 10, 12, probs.as_mut_ptr(), 2, &mut class) };
    assert_eq!(s, PqdStatus::BufferTooSmall);
    let s = unsafe { pqd_model_predict_rgb(handle, img.pixels.as_ptr(), 0, 12, ptr::null_mut(), 0, &mut class) };
    assert_eq!(s, PqdStatus::Shape);
    let s = unsafe { pqd_model_predict_png(ptr::null(), cstr(&png).as_ptr(), ptr::null_mut(), 0, &mut class) };
    assert_eq!(s, PqdStatus::NullPointer);

    unsafe { pqd_model_free(handle) };
    unsafe { pqd_model_free(ptr::null_mut()) };
}

#[test]
fn load_failures_leave_null_handle() {
    let dir = tempfile::tempdir().unwrap();
    let mut handle: *mut PqdModel = std::ptr::dangling_mut::<PqdModel>();
    let s = unsafe { pqd_model_load(cstr(&dir.path().join("none")).as_ptr(), &mut handle) };
    assert_eq!(s, PqdStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().is_some());

    tiny_checkpoint(dir.path());
    std::fs::write(dir.path().join("index.json"), "{").unwrap();
    let s = unsafe { pqd_model_load(cstr(dir.path()).as_ptr(), &mut handle) };
    assert_eq!(s, PqdStatus::Format);
    assert_eq!(unsafe { pqd_model_load(ptr::null(), &mut handle) }, PqdStatus::NullPointer);
    assert_eq!(
        unsafe { pqd_model_load(cstr(dir.path()).as_ptr(), ptr::null_mut()) },
        PqdStatus::NullPointer
    );
}

/// Directory holding the freshly built `libpqd_ffi.a` for this profile.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header_and_staticlib() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libpqd_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("examples/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap_or_else(|e| panic!("cannot run {cc}: {e}"));
    assert!(status.success(), "C compile failed");
    let png = out.path().join("smoke.png");
    let run = Command::new(&exe).arg(&png).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("amplitude 513x640"), "{stdout}");
    assert!(stdout.trim_end().ends_with("ok V18"), "{stdout}");
    assert_eq!(RgbImage::read_png(&png).unwrap().width, 32);
}
