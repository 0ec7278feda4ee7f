use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use fnirs_pain_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = fnirs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn build_predict_save_load() {
    unsafe {
        let mut m: *mut FnirsModel = ptr::null_mut();
        assert_eq!(fnirs_model_build(c("bilstm").as_ptr(), 6, 3, 11, &mut m), FnirsStatus::Ok);
        let (mut t, mut ch, mut k, mut n) = (0, 0, 0, 0);
        assert_eq!(fnirs_model_info(m, &mut t, &mut ch, &mut k, &mut n), FnirsStatus::Ok);
        assert_eq!((t, ch, k), (6, 3, 4));
        assert!(n > 0);

        let windows: Vec<f64> = (0..2 * 6 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut probs = [0.0; 8];
        assert_eq!(fnirs_model_predict_proba(m, windows.as_ptr(), 2, probs.as_mut_ptr()), FnirsStatus::Ok);
        for row in probs.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut classes = [9u32; 2];
        assert_eq!(fnirs_model_predict(m, windows.as_ptr(), 2, classes.as_mut_ptr()), FnirsStatus::Ok);
        for (row, &cl) in probs.chunks(4).zip(&classes) {
            let best = (0..4).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            assert_eq!(best as u32, cl);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().join("m.ckpt").to_str().unwrap());
        assert_eq!(fnirs_model_save(m, path.as_ptr()), FnirsStatus::Ok);
        let mut back: *mut FnirsModel = ptr::null_mut();
        assert_eq!(fnirs_model_load(path.as_ptr(), &mut back), FnirsStatus::Ok);
        let mut again = [0.0; 8];
        assert_eq!(fnirs_model_predict_proba(back, windows.as_ptr(), 2, again.as_mut_ptr()), FnirsStatus::Ok);
        assert_eq!(probs, again);
        fnirs_model_free(back);
        fnirs_model_free(m);
        fnirs_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut m: *mut FnirsModel = ptr::null_mut();
        assert_eq!(fnirs_model_build(c("cnn").as_ptr(), 6, 3, 0, &mut m), FnirsStatus::InvalidArgument);
        assert!(last_error().contains("cnn"));
        assert!(m.is_null());
        assert_eq!(fnirs_model_build(ptr::null(), 6, 3, 0, &mut m), FnirsStatus::NullPointer);
        assert_eq!(fnirs_model_load(c("/nonexistent/m.ckpt").as_ptr(), &mut m), FnirsStatus::Io);
        assert!(last_error().contains("/nonexistent/m.ckpt"));

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = c(junk.to_str().unwrap());
        assert_eq!(fnirs_model_load(junk.as_ptr(), &mut m), FnirsStatus::Checkpoint);

        let (mut a, mut s, mut sp) = (0.0, 0.0, 0.0);
        let preds = [0u32, 5];
        let truths = [0u32, 1];
        assert_eq!(
            fnirs_metrics(preds.as_ptr(), truths.as_ptr(), 2, 4, &mut a, &mut s, &mut sp),
            FnirsStatus::InvalidArgument
        );
    }
}

#[test]
fn metrics_match_definition() {
    let preds = [0u32, 1, 2, 3, 3, 1];
    let (mut a, mut s, mut sp) = (0.0, 0.0, 0.0);
    let st = unsafe { fnirs_metrics(preds.as_ptr(), preds.as_ptr(), 6, 4, &mut a, &mut s, &mut sp) };
    assert_eq!(st, FnirsStatus::Ok);
    assert_eq!((a, s, sp), (100.0, 100.0, 100.0));
}

#[test]
fn synth_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "n_subjects = 1\ntrial_seconds = 30\n").unwrap();
    let out = dir.path().join("data");
    let mut n = 0;
    let st = unsafe {
        fnirs_synth_generate(
            c(cfg.to_str().unwrap()).as_ptr(),
            3,
            c(out.to_str().unwrap()).as_ptr(),
            &mut n,
        )
    };
    assert_eq!(st, FnirsStatus::Ok);
    assert_eq!(n, 12);
    assert!(out.join("manifest.csv").exists());
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fnirs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../include/fnirs_pain.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "typedef struct FnirsModel FnirsModel;",
        "FNIRS_STATUS_OK = 0",
        "fnirs_model_build",
        "fnirs_model_predict_proba",
        "fnirs_last_error",
    ] {
        assert!(text.contains(name), "header lacks `{name}`");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
