use std::ffi::{CStr, CString};
use std::ptr;

use moe_lab_ffi::*;

const MODEL: &str = r#"{
  "lambda": 0.5,
  "base": {"kind": "student_t", "expert": "identity", "a0": [1.0, 0.0], "b0": 0.0, "nu0": 4.0},
  "prompt": {"expert": "identity", "a": [1.0, 1.0], "b": 1.0, "nu": 0.01}
}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(moe_last_error()).to_string_lossy().into_owned() }
}

fn model() -> *mut MoeModel {
    let json = CString::new(MODEL).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { moe_model_from_json(json.as_ptr(), &mut m) }, MoeStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn model_round_trip_and_logpdf() {
    let m = model();
    unsafe {
        assert_eq!(moe_model_dim(m), 2);
        let mut s = ptr::null_mut();
        assert_eq!(moe_model_to_json(m, &mut s), MoeStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_owned();
        moe_string_free(s);
        let again = CString::new(text).unwrap();
        let mut m2 = ptr::null_mut();
        assert_eq!(moe_model_from_json(again.as_ptr(), &mut m2), MoeStatus::Ok);

        let x = [0.3, -0.2];
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(moe_model_logpdf(m, x.as_ptr(), 2, 1.1, &mut a), MoeStatus::Ok);
        assert_eq!(moe_model_logpdf(m2, x.as_ptr(), 2, 1.1, &mut b), MoeStatus::Ok);
        assert_eq!(a, b);
        assert!(a.is_finite());

        assert_eq!(moe_model_logpdf(m, x.as_ptr(), 3, 1.1, &mut a), MoeStatus::Shape);
        assert!(!last_error().is_empty());
        moe_model_free(m2);
        moe_model_free(m);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(moe_model_from_json(ptr::null(), &mut m), MoeStatus::NullPointer);
        assert!(m.is_null());
        let bad = CString::new("{").unwrap();
        assert_eq!(moe_model_from_json(bad.as_ptr(), &mut m), MoeStatus::Parse);
        let neg = CString::new(MODEL.replace("0.01", "-1")).unwrap();
        assert_eq!(moe_model_from_json(neg.as_ptr(), &mut m), MoeStatus::InvalidArgument);
        assert!(last_error().contains("nu") || !last_error().is_empty());
        let missing = CString::new("/nonexistent/data.csv").unwrap();
        let mut d = ptr::null_mut();
        assert_eq!(moe_dataset_load_csv(missing.as_ptr(), &mut d), MoeStatus::Io);
        assert_eq!(moe_model_dim(ptr::null()), 0);
        moe_model_free(ptr::null_mut());
        moe_dataset_free(ptr::null_mut());
        moe_fit_result_free(ptr::null_mut());
        moe_string_free(ptr::null_mut());
        let v = CStr::from_ptr(moe_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn sample_fit_and_inspect() {
    let m = model();
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(moe_sample(m, 2000, 11, &mut data), MoeStatus::Ok);
        assert_eq!(moe_dataset_len(data), 2000);
        assert_eq!(moe_dataset_dim(data), 2);

        let mut ll = 0.0;
        assert_eq!(moe_log_likelihood(m, data, &mut ll), MoeStatus::Ok);
        assert!(ll.is_finite());

        let opts = CString::new(r#"{"max_em_iters": 200}"#).unwrap();
        let mut fit = ptr::null_mut();
        assert_eq!(moe_fit(m, data, opts.as_ptr(), 3, &mut fit), MoeStatus::Ok, "{}", last_error());
        let (mut lam, mut fll, mut iters, mut conv) = (0.0, 0.0, 0usize, false);
        assert_eq!(moe_fit_result_summary(fit, &mut lam, &mut fll, &mut iters, &mut conv), MoeStatus::Ok);
        assert!((lam - 0.5).abs() < 0.05);
        assert!(fll >= ll - 1e-6);
        assert!(iters >= 1);
        let mut a = [0.0; 2];
        let (mut b, mut nu) = (0.0, 0.0);
        assert_eq!(moe_fit_result_prompt(fit, a.as_mut_ptr(), 2, &mut b, &mut nu), MoeStatus::Ok);
        assert!((a[0] - 1.0).abs() < 0.05 && (a[1] - 1.0).abs() < 0.05);
        assert!((b - 1.0).abs() < 0.05);
        assert!((nu - 0.01).abs() < 0.005);
        assert_eq!(moe_fit_result_prompt(fit, a.as_mut_ptr(), 1, &mut b, &mut nu), MoeStatus::Shape);
        let mut js = ptr::null_mut();
        assert_eq!(moe_fit_result_to_json(fit, &mut js), MoeStatus::Ok);
        assert!(CStr::from_ptr(js).to_str().unwrap().contains("lambda_hat"));
        moe_string_free(js);

        let bad = CString::new(r#"{"em_tol": -1}"#).unwrap();
        let mut f2 = ptr::null_mut();
        assert_eq!(moe_fit(m, data, bad.as_ptr(), 3, &mut f2), MoeStatus::InvalidArgument);
        assert!(f2.is_null());

        moe_fit_result_free(fit);
        moe_dataset_free(data);
        moe_model_free(m);
    }
}

#[test]
fn dataset_from_arrays_and_csv() {
    let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let y = [1.0, 2.0, 3.0];
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(moe_dataset_new(x.as_ptr(), y.as_ptr(), 3, 2, &mut d), MoeStatus::Ok);
        let mut row = [0.0; 2];
        let mut yy = 0.0;
        assert_eq!(moe_dataset_row(d, 1, row.as_mut_ptr(), 2, &mut yy), MoeStatus::Ok);
        assert_eq!((row, yy), ([0.3, 0.4], 2.0));
        assert_eq!(moe_dataset_row(d, 3, row.as_mut_ptr(), 2, &mut yy), MoeStatus::InvalidArgument);

        let dir = std::env::temp_dir().join(format!("moe_ffi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = CString::new(dir.join("d.csv").to_str().unwrap()).unwrap();
        assert_eq!(moe_dataset_save_csv(d, path.as_ptr()), MoeStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(moe_dataset_load_csv(path.as_ptr(), &mut back), MoeStatus::Ok);
        assert_eq!(moe_dataset_len(back), 3);
        assert_eq!(moe_dataset_row(back, 2, row.as_mut_ptr(), 2, &mut yy), MoeStatus::Ok);
        assert_eq!((row, yy), ([0.5, 0.6], 3.0));
        moe_dataset_free(back);
        moe_dataset_free(d);
        std::fs::remove_dir_all(dir).ok();

        assert_eq!(moe_dataset_new(ptr::null(), y.as_ptr(), 3, 2, &mut d), MoeStatus::NullPointer);
    }
}

#[test]
fn slope() {
    let n = [1e3, 1e4, 1e5];
    let e: Vec<f64> = n.iter().map(|v: &f64| v.powf(-0.5)).collect();
    let (mut s, mut i, mut r2) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(moe_fit_slope(n.as_ptr(), e.as_ptr(), 3, &mut s, &mut i, &mut r2), MoeStatus::Ok);
        assert!((s + 0.5).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        assert_eq!(moe_fit_slope(n.as_ptr(), e.as_ptr(), 2, &mut s, &mut i, ptr::null_mut()), MoeStatus::Numeric);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/moe_lab.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.trim().strip_prefix("pub unsafe extern \"C\" fn ").or_else(|| l.trim().strip_prefix("pub extern \"C\" fn ")))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct MoeModel MoeModel;"));
    assert!(header.contains("MOE_STATUS_NULL_POINTER = 1"));
}
