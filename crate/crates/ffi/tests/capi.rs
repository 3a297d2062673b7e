use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use chaoswave_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { cw_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

fn model() -> *mut CwModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cw_model_new(0.75, 0.5, 0, &mut m) }, CwStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn invalid_hurst_sets_status_and_message() {
    let mut m = ptr::null_mut();
    let s = unsafe { cw_model_new(0.4, 0.5, 0, &mut m) };
    assert_eq!(s, CwStatus::InvalidParameter);
    assert!(m.is_null());
    assert!(last_error().contains("hurst"));
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { cw_model_new(0.75, 0.5, 0, ptr::null_mut()) }, CwStatus::NullPointer);
    let mut a = CwAlpha::default();
    assert_eq!(unsafe { cw_alpha(ptr::null(), 1, 1.0, &mut a) }, CwStatus::NullPointer);
    unsafe {
        cw_model_free(ptr::null_mut());
        cw_solver_free(ptr::null_mut());
        cw_chaos_free(ptr::null_mut());
    }
}

#[test]
fn alpha_and_constants() {
    let m = model();
    let mut a = CwAlpha::default();
    assert_eq!(unsafe { cw_alpha(m, 1, 1.0, &mut a) }, CwStatus::Ok);
    assert!((a.value - 0.6426990817).abs() < 1e-8, "{}", a.value);
    assert_eq!(unsafe { cw_alpha(m, 7, 1.0, &mut a) }, CwStatus::Unsupported);
    let mut c = CwConstants::default();
    assert_eq!(unsafe { cw_constants(m, 1.0, &mut c) }, CwStatus::Ok);
    assert_eq!(c.big_gamma_t, 1.5);
    assert_eq!(c.m_t, 8.0);
    unsafe { cw_model_free(m) };
}

#[test]
fn solver_chaos_round_trip() {
    let m = model();
    let mut sg = ptr::null_mut();
    assert_eq!(unsafe { cw_solver_new(m, 1.0, 1.0, 8, 8, &mut sg) }, CwStatus::Ok);
    let mut cells = 0usize;
    assert_eq!(unsafe { cw_solver_cells(sg, &mut cells) }, CwStatus::Ok);
    assert_eq!(cells, 64);
    let mut ch = ptr::null_mut();
    assert_eq!(unsafe { cw_chaos_new(sg, 1.0, 0.0, 2, &mut ch) }, CwStatus::Ok);
    let (mut v1, mut v2, mut m2) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(cw_chaos_variance(ch, 1, &mut v1), CwStatus::Ok);
        assert_eq!(cw_chaos_variance(ch, 2, &mut v2), CwStatus::Ok);
        assert_eq!(cw_chaos_variance(ch, 3, &mut v2), CwStatus::InvalidParameter);
        assert_eq!(cw_chaos_variance(ch, 2, &mut v2), CwStatus::Ok);
        assert_eq!(cw_chaos_second_moment(ch, &mut m2), CwStatus::Ok);
    }
    assert!((m2 - (1.0 + v1 + v2)).abs() < 1e-12);
    let zero = vec![0.0; cells];
    let mut u = f64::NAN;
    assert_eq!(unsafe { cw_chaos_evaluate(ch, zero.as_ptr(), cells, &mut u) }, CwStatus::Ok);
    assert!(u.is_finite());
    assert_eq!(unsafe { cw_chaos_evaluate(ch, zero.as_ptr(), cells - 1, &mut u) }, CwStatus::InvalidParameter);
    let mut a = vec![0.0; 100];
    let mut b = vec![0.0; 100];
    unsafe {
        assert_eq!(cw_chaos_sample(ch, 9, 100, a.as_mut_ptr()), CwStatus::Ok);
        assert_eq!(cw_chaos_sample(ch, 9, 100, b.as_mut_ptr()), CwStatus::Ok);
        assert_eq!(cw_chaos_sample(ch, 9, 0, ptr::null_mut()), CwStatus::Ok);
        cw_chaos_free(ch);
        cw_solver_free(sg);
        cw_model_free(m);
    }
    assert_eq!(a, b);
}

#[test]
fn order_three_budget() {
    let m = model();
    let mut sg = ptr::null_mut();
    assert_eq!(unsafe { cw_solver_new(m, 1.0, 1.0, 16, 16, &mut sg) }, CwStatus::Ok);
    let mut ch = ptr::null_mut();
    assert_eq!(unsafe { cw_chaos_new(sg, 1.0, 0.0, 3, &mut ch) }, CwStatus::Budget);
    assert!(ch.is_null());
    unsafe {
        cw_solver_free(sg);
        cw_model_free(m);
    }
}

#[test]
fn run_command_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = CString::new("simulate").unwrap();
    let cfg = CString::new(format!("[run]\nsamples = 0\noutput_dir = {:?}\n", dir.path().to_string_lossy())).unwrap();
    let mut code = -1;
    assert_eq!(unsafe { cw_run_command(cmd.as_ptr(), cfg.as_ptr(), &mut code) }, CwStatus::Ok);
    assert_eq!(code, 0);
    let bad = CString::new("[model]\nhurst = 0.4\n").unwrap();
    assert_eq!(unsafe { cw_run_command(cmd.as_ptr(), bad.as_ptr(), &mut code) }, CwStatus::InvalidParameter);
    assert_eq!(code, 2);
    let unknown = CString::new("plot").unwrap();
    assert_eq!(unsafe { cw_run_command(unknown.as_ptr(), ptr::null(), &mut code) }, CwStatus::InvalidParameter);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/chaoswave.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["cw_model_new", "cw_chaos_sample", "cw_run_command", "CW_STATUS_BUDGET", "CwConstants"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"chaoswave.h\"\nint main(void) { CwModel *m = 0; CwStatus s = cw_model_new(0.75, 0.5, 0, &m); cw_model_free(m); return s == CW_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("C compiler available");
    assert!(status.success());
}
