use std::ffi::{CStr, CString};
use std::ptr;

use gaugelab_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = gaugelab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn hadamard() -> *mut GaugelabModel {
    let mut m = ptr::null_mut();
    let params = cstr(r#"{"d": 20, "n_train": 10}"#);
    let st = unsafe { gaugelab_model_new(cstr("l1_hadamard").as_ptr(), params.as_ptr(), 3, &mut m) };
    assert_eq!(st, GaugelabStatus::Ok, "{}", if st == GaugelabStatus::Ok { String::new() } else { last_error() });
    m
}

#[test]
fn model_lifecycle_and_gradient() {
    let m = hadamard();
    let mut dim = 0usize;
    let mut count = 0usize;
    unsafe {
        assert_eq!(gaugelab_model_param_dim(m, &mut dim), GaugelabStatus::Ok);
        assert_eq!(gaugelab_model_generator_count(m, &mut count), GaugelabStatus::Ok);
    }
    assert_eq!((dim, count), (40, 20));

    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let (mut loss, mut loss2) = (0.0, 0.0);
    unsafe {
        assert_eq!(gaugelab_model_init(m, theta.as_mut_ptr(), dim), GaugelabStatus::Ok);
        assert_eq!(gaugelab_model_loss(m, theta.as_ptr(), dim, &mut loss), GaugelabStatus::Ok);
        assert_eq!(gaugelab_model_grad(m, theta.as_ptr(), dim, grad.as_mut_ptr(), &mut loss2), GaugelabStatus::Ok);
    }
    assert!(theta.iter().any(|&x| x != 0.0));
    assert_eq!(loss, loss2);

    let h = 1e-6;
    for i in [0, 7, 25] {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[i] += h;
        tm[i] -= h;
        let (mut lp, mut lm) = (0.0, 0.0);
        unsafe {
            gaugelab_model_loss(m, tp.as_ptr(), dim, &mut lp);
            gaugelab_model_loss(m, tm.as_ptr(), dim, &mut lm);
        }
        assert!(((lp - lm) / (2.0 * h) - grad[i]).abs() < 1e-6 * (1.0 + grad[i].abs()));
    }
    unsafe { gaugelab_model_free(m) };
}

#[test]
fn orbit_gram_and_correction_for_hadamard() {
    let m = hadamard();
    let theta: Vec<f64> = (0..40).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut gram = vec![0.0; 400];
    let mut corr = 0.0;
    unsafe {
        assert_eq!(gaugelab_model_orbit_gram(m, theta.as_ptr(), 40, gram.as_mut_ptr(), 400), GaugelabStatus::Ok);
        assert_eq!(gaugelab_model_gauge_correction(m, theta.as_ptr(), 40, 1.0, 2.0, &mut corr), GaugelabStatus::Ok);
    }
    // scaling u_i -> e^t u_i, v_i -> e^-t v_i has tangent (u_i, -v_i)
    let mut logdet = 0.0;
    for i in 0..20 {
        let expect = theta[i].powi(2) + theta[20 + i].powi(2);
        assert!((gram[i * 20 + i] - expect).abs() < 1e-12);
        logdet += expect.ln();
        for j in (0..20).filter(|&j| j != i) {
            assert_eq!(gram[i * 20 + j], 0.0);
        }
    }
    assert!((corr - logdet / 4.0).abs() < 1e-10 * logdet.abs());
    unsafe { gaugelab_model_free(m) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut m = ptr::null_mut();
    let st = unsafe { gaugelab_model_new(cstr("mnist").as_ptr(), ptr::null(), 0, &mut m) };
    assert_eq!(st, GaugelabStatus::UnknownName);
    assert!(m.is_null());
    assert!(last_error().contains("mnist"));

    let st = unsafe { gaugelab_model_new(ptr::null(), ptr::null(), 0, &mut m) };
    assert_eq!(st, GaugelabStatus::NullPointer);

    let st = unsafe { gaugelab_model_new(cstr("pca").as_ptr(), cstr("{not json").as_ptr(), 0, &mut m) };
    assert_eq!(st, GaugelabStatus::InvalidArgument);

    let m = hadamard();
    let theta = [1.0; 3];
    let mut loss = 0.0;
    assert_eq!(unsafe { gaugelab_model_loss(m, theta.as_ptr(), 3, &mut loss) }, GaugelabStatus::DimensionMismatch);
    assert!(last_error().contains("expected 40"));
    let mut gram = [0.0; 4];
    let st = unsafe { gaugelab_model_orbit_gram(m, theta.as_ptr(), 3, gram.as_mut_ptr(), 4) };
    assert_eq!(st, GaugelabStatus::DimensionMismatch);

    let zero = vec![0.0; 40];
    let mut corr = 0.0;
    let st = unsafe { gaugelab_model_gauge_correction(m, zero.as_ptr(), 40, 1.0, 1.0, &mut corr) };
    assert_ne!(st, GaugelabStatus::Ok);
    let st = unsafe { gaugelab_model_gauge_correction(m, zero.as_ptr(), 40, 1.0, 0.0, &mut corr) };
    assert_eq!(st, GaugelabStatus::InvalidArgument);

    assert_eq!(unsafe { gaugelab_model_param_dim(ptr::null(), ptr::null_mut()) }, GaugelabStatus::NullPointer);
    unsafe {
        gaugelab_model_free(m);
        gaugelab_model_free(ptr::null_mut());
        gaugelab_string_free(ptr::null_mut());
    }
}

#[test]
fn run_experiment_returns_report_json() {
    let cfg = cstr(r#"{"experiment":"relu_balance","seed":1,"dynamics":{"total_steps":400,"thinning":100}}"#);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { gaugelab_run_experiment(cfg.as_ptr(), &mut out) }, GaugelabStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { gaugelab_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["experiment"], "relu_balance");
    assert_eq!(v["dynamics"]["total_steps"], 400);
    assert!(v["metrics"]["loss"].as_f64().unwrap().is_finite());

    let bad = cstr(r#"{"experiment":"relu_balance","sed":1}"#);
    assert_eq!(unsafe { gaugelab_run_experiment(bad.as_ptr(), &mut out) }, GaugelabStatus::InvalidArgument);
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(gaugelab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
