use std::ffi::{c_char, CStr};
use std::ptr;

use actor_anchor_ffi::*;

unsafe fn gaussian(mean: &[f64], var: &[f64]) -> *mut AaGaussian {
    let mut g = ptr::null_mut();
    assert_eq!(aa_gaussian_new(mean.as_ptr(), var.as_ptr(), mean.len(), &mut g), AaStatus::Ok);
    g
}

unsafe fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    aa_last_error_message(buf.as_mut_ptr(), buf.len());
    CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
}

#[test]
fn poe_and_klreg_match_up_to_variance_scale() {
    unsafe {
        let actor = gaussian(&[1.0, -0.5], &[0.25, 0.5]);
        let prior = gaussian(&[0.0, 0.3], &[1.0, 0.2]);
        let (mut poe, mut kl) = (ptr::null_mut(), ptr::null_mut());
        let mut beta = 0.0;
        assert_eq!(aa_alpha_to_beta(0.3, &mut beta), AaStatus::Ok);
        assert_eq!(aa_poe_compose(actor, prior, 0.3, &mut poe), AaStatus::Ok);
        assert_eq!(aa_klreg_compose(actor, prior, beta, &mut kl), AaStatus::Ok);
        let (mut mp, mut mk, mut vp, mut vk) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        assert_eq!(aa_gaussian_mean(poe, mp.as_mut_ptr(), 2), AaStatus::Ok);
        assert_eq!(aa_gaussian_mean(kl, mk.as_mut_ptr(), 2), AaStatus::Ok);
        assert_eq!(aa_gaussian_var(poe, vp.as_mut_ptr(), 2), AaStatus::Ok);
        assert_eq!(aa_gaussian_var(kl, vk.as_mut_ptr(), 2), AaStatus::Ok);
        for i in 0..2 {
            assert!((mp[i] - mk[i]).abs() < 1e-12);
            assert!((vp[i] - (1.0 + beta) * vk[i]).abs() < 1e-12);
        }
        let precision = 0.3 / 0.25 + 0.7 / 1.0;
        assert!((vp[0] - 1.0 / precision).abs() < 1e-12);

        let mut audit = AaEquivalence { alpha: 0.0, beta: 0.0, max_mean_abs_diff: 1.0, variance_identity_residual: 1.0 };
        assert_eq!(aa_equivalence_audit(actor, prior, 0.3, &mut audit), AaStatus::Ok);
        assert!(audit.max_mean_abs_diff < 1e-12 && audit.variance_identity_residual < 1e-12);

        let mut kl_value = -1.0;
        assert_eq!(aa_gaussian_kl(actor, actor, &mut kl_value), AaStatus::Ok);
        assert_eq!(kl_value, 0.0);
        let mut w2 = -1.0;
        assert_eq!(aa_gaussian_w2(actor, prior, &mut w2), AaStatus::Ok);
        assert!(w2 > 0.0);
        assert_eq!(aa_gaussian_dim(poe), 2);
        for g in [actor, prior, poe, kl] {
            aa_gaussian_free(g);
        }
        aa_gaussian_free(ptr::null_mut());
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut g = ptr::null_mut();
        let bad = aa_gaussian_new([0.0].as_ptr(), [-1.0].as_ptr(), 1, &mut g);
        assert_eq!(bad, AaStatus::InvalidArgument);
        assert!(g.is_null());
        assert!(last_error().contains("variance"));

        let a = gaussian(&[0.0], &[1.0]);
        let b = gaussian(&[0.0, 0.0], &[1.0, 1.0]);
        let mut out = ptr::null_mut();
        assert_eq!(aa_poe_compose(a, b, 0.5, &mut out), AaStatus::DimensionMismatch);
        assert_eq!(aa_poe_compose(a, ptr::null(), 0.5, &mut out), AaStatus::NullPointer);
        assert_eq!(aa_poe_compose(a, a, 1.5, &mut out), AaStatus::InvalidArgument);
        let mut small = [0.0; 1];
        assert_eq!(aa_gaussian_mean(b, small.as_mut_ptr(), 1), AaStatus::BufferTooSmall);
        assert!(last_error().contains("need 2"));
        let mut x = 0.0;
        assert_eq!(aa_alpha_to_beta(1.0, &mut x), AaStatus::InvalidArgument);
        assert_eq!(aa_pinsker_tv_bound(-1.0, &mut x), AaStatus::InvalidArgument);
        assert_eq!(aa_poe_finite([1.0, 0.0].as_ptr(), [0.0, 1.0].as_ptr(), 2, 0.5, small.as_mut_ptr()), AaStatus::EmptySupport);
        assert_eq!(aa_last_error_message(ptr::null_mut(), 0), last_error().len());
        aa_gaussian_free(a);
        aa_gaussian_free(b);
    }
}

#[test]
fn finite_helpers() {
    unsafe {
        let actor = [0.5, 0.3, 0.2];
        let prior = [0.2, 0.2, 0.6];
        let mut out = [0.0; 3];
        assert_eq!(aa_poe_finite(actor.as_ptr(), prior.as_ptr(), 3, 0.5, out.as_mut_ptr()), AaStatus::Ok);
        let w: Vec<f64> = actor.iter().zip(&prior).map(|(a, p): (&f64, &f64)| (a * p).sqrt()).collect();
        let z: f64 = w.iter().sum();
        for i in 0..3 {
            assert!((out[i] - w[i] / z).abs() < 1e-12);
        }
        let (mut tv, mut kl, mut bound) = (0.0, 0.0, 0.0);
        assert_eq!(aa_tv_distance(actor.as_ptr(), prior.as_ptr(), 3, &mut tv), AaStatus::Ok);
        assert!((tv - 0.4).abs() < 1e-12);
        assert_eq!(aa_finite_kl(actor.as_ptr(), prior.as_ptr(), 3, &mut kl), AaStatus::Ok);
        assert_eq!(aa_pinsker_tv_bound(kl, &mut bound), AaStatus::Ok);
        assert!(bound >= tv);
        assert_eq!(aa_cpi_penalty_coeff(0.99), 19800.0);
        assert_eq!(aa_cpi_penalty_coeff(0.9), 180.0);
        let mut alpha = 0.0;
        assert_eq!(aa_beta_to_alpha(1.0, &mut alpha), AaStatus::Ok);
        assert_eq!(alpha, 0.5);
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(aa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
