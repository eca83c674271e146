use std::ffi::{c_char, CStr, CString};

use removability::exact;
use removability::tower::{self, ConstructionParams};
use removability_ffi::*;

fn last_error() -> String {
    let len = rm_last_error_length();
    let mut buf = vec![0 as c_char; len];
    assert_eq!(unsafe { rm_last_error_message(buf.as_mut_ptr(), len) }, len);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

#[test]
fn solve_returns_the_smallest_pair() {
    let alpha = CString::new("0.6").unwrap();
    let p = CString::new("2").unwrap();
    let mut h = std::ptr::null_mut();
    assert_eq!(unsafe { rm_solve(alpha.as_ptr(), p.as_ptr(), 64, 3, &mut h) }, RmStatus::Ok);
    let (mut a, mut b) = (0, 0);
    assert_eq!(unsafe { rm_params_exponents(h, &mut a, &mut b) }, RmStatus::Ok);
    assert_eq!((a, b), (12, 22));
    unsafe { rm_params_free(h) };
}

#[test]
fn infeasible_request_sets_status_and_message() {
    let alpha = CString::new("2/3").unwrap();
    let p = CString::new("2").unwrap();
    let mut h = std::ptr::null_mut();
    assert_eq!(unsafe { rm_solve(alpha.as_ptr(), p.as_ptr(), 256, 3, &mut h) }, RmStatus::Infeasible);
    assert!(h.is_null());
    assert!(last_error().contains("256"));
}

#[test]
fn float_evaluation_matches_core() {
    let mut h = std::ptr::null_mut();
    assert_eq!(unsafe { rm_params_new(2, 2, 3, &mut h) }, RmStatus::Ok);
    let mut u = 0.0;
    assert_eq!(unsafe { rm_u_eval(h, 3, 0.375, 0.5, &mut u) }, RmStatus::Ok);
    let p = ConstructionParams::with_exponents(2, 2, 3).unwrap();
    let expected = tower::u_eval(&p, 3, &exact::ratio(3, 8), &exact::ratio(1, 2)).unwrap();
    assert_eq!(u, exact::to_f64(&expected));
    assert_eq!(unsafe { rm_u_eval(h, 4, 0.5, 0.5, &mut u) }, RmStatus::Range);
    assert_eq!(unsafe { rm_u_eval(h, 1, 2.0, 0.5, &mut u) }, RmStatus::Domain);
    unsafe { rm_params_free(h) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut u = 0.0;
    assert_eq!(unsafe { rm_u_eval(std::ptr::null(), 1, 0.5, 0.5, &mut u) }, RmStatus::NullPointer);
    assert_eq!(unsafe { rm_params_new(2, 2, 3, std::ptr::null_mut()) }, RmStatus::NullPointer);
    let bad = CString::new("zero/0").unwrap();
    let mut h = std::ptr::null_mut();
    assert_eq!(unsafe { rm_solve(bad.as_ptr(), bad.as_ptr(), 64, 3, &mut h) }, RmStatus::Format);
    unsafe { rm_params_free(std::ptr::null_mut()) };
}

#[test]
fn integral_test_reports_closed_form_value() {
    let mut verdict = RmVerdict::Inconclusive;
    let mut value = 0.0;
    assert_eq!(unsafe { rm_integral_test(1.0, 0.7, 2.0, &mut verdict, &mut value) }, RmStatus::Ok);
    assert_eq!(verdict, RmVerdict::Converges);
    assert!((value - 7.0).abs() < 1e-6);
    assert_eq!(unsafe { rm_integral_test(1.0, 0.6, 2.0, &mut verdict, &mut value) }, RmStatus::Ok);
    assert_eq!(verdict, RmVerdict::Diverges);
    assert!(value.is_nan());
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/removability.h");
    for name in [
        "rm_params_new",
        "rm_solve",
        "rm_params_free",
        "rm_params_exponents",
        "rm_u_eval",
        "rm_u_eval_exact",
        "rm_integral_test",
        "rm_last_error_length",
        "rm_last_error_message",
        "RM_STATUS_INFEASIBLE",
        "typedef struct RmParams RmParams",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
