//! C ABI for the actor-anchor composition kernels.
//!
//! Every fallible function returns an [`AaStatus`] and writes its result through an
//! out-pointer. On failure a message is stored per thread and can be copied out with
//! [`aa_last_error_message`]. Gaussians cross the boundary as opaque [`AaGaussian`]
//! handles that the caller releases with [`aa_gaussian_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use actor_anchor::finite::{self, FinitePolicy};
use actor_anchor::gaussian::{self, DiagGaussian};
use actor_anchor::mdp;
use actor_anchor::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptySupport = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

/// Opaque diagonal Gaussian.
pub struct AaGaussian(DiagGaussian);

/// Agreement between PoE(alpha) and KL-Reg(alpha / (1 - alpha)).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AaEquivalence {
    pub alpha: f64,
    pub beta: f64,
    pub max_mean_abs_diff: f64,
    pub variance_identity_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(err: &Error) -> AaStatus {
    match err {
        Error::DimensionMismatch { .. } | Error::StructuralMismatch(_) => AaStatus::DimensionMismatch,
        Error::EmptySupport => AaStatus::EmptySupport,
        _ => AaStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> AaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AaStatus::Ok,
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            AaStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Small(needed))) => {
            set_error(format!("output buffer too small: need {needed}"));
            AaStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            AaStatus::Internal
        }
    }
}

unsafe fn input<'a>(data: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if data.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn handle<'a>(g: *const AaGaussian, name: &'static str) -> Result<&'a DiagGaussian, Fail> {
    g.as_ref().map(|h| &h.0).ok_or(Fail::Null(name))
}

unsafe fn store<T>(out: *mut T, value: T, name: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn store_gaussian(out: *mut *mut AaGaussian, g: DiagGaussian) -> Result<(), Fail> {
    store(out, Box::into_raw(Box::new(AaGaussian(g))), "out")
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    if len < src.len() {
        return Err(Fail::Small(src.len()));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aa_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains a NUL byte"),
    };
    VERSION.as_ptr()
}

/// Copies the last error message of this thread into `buf`, NUL-terminated and
/// truncated to `len - 1` bytes. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn aa_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a Gaussian from `dim` means and positive variances.
///
/// # Safety
/// `mean` and `var` must be valid for `dim` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_new(
    mean: *const f64,
    var: *const f64,
    dim: usize,
    out: *mut *mut AaGaussian,
) -> AaStatus {
    guard(|| {
        let g = DiagGaussian::new(input(mean, dim, "mean")?.to_vec(), input(var, dim, "var")?.to_vec())?;
        store_gaussian(out, g)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `g` must be null or a handle returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_free(g: *mut AaGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Dimension of `g`, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_dim(g: *const AaGaussian) -> usize {
    g.as_ref().map_or(0, |h| h.0.dim())
}

/// Copies the mean of `g` into `out`, which holds `len` values.
///
/// # Safety
/// `g` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_mean(g: *const AaGaussian, out: *mut f64, len: usize) -> AaStatus {
    guard(|| copy_out(handle(g, "g")?.mean(), out, len))
}

/// Copies the variances of `g` into `out`, which holds `len` values.
///
/// # Safety
/// `g` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_var(g: *const AaGaussian, out: *mut f64, len: usize) -> AaStatus {
    guard(|| copy_out(handle(g, "g")?.var(), out, len))
}

/// Product-of-experts refinement with actor weight `alpha` in [0, 1].
///
/// # Safety
/// `actor` and `prior` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_poe_compose(
    actor: *const AaGaussian,
    prior: *const AaGaussian,
    alpha: f64,
    out: *mut *mut AaGaussian,
) -> AaStatus {
    guard(|| {
        let g = gaussian::poe_compose(handle(actor, "actor")?, handle(prior, "prior")?, alpha)?;
        store_gaussian(out, g)
    })
}

/// KL-regularized update with trust weight `beta > 0`.
///
/// # Safety
/// `actor` and `prior` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_klreg_compose(
    actor: *const AaGaussian,
    prior: *const AaGaussian,
    beta: f64,
    out: *mut *mut AaGaussian,
) -> AaStatus {
    guard(|| {
        let g = gaussian::klreg_compose(handle(actor, "actor")?, handle(prior, "prior")?, beta)?;
        store_gaussian(out, g)
    })
}

/// Additive mix with prior weight `lambda` in [0, 1].
///
/// # Safety
/// `actor` and `prior` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_additive_mix(
    actor: *const AaGaussian,
    prior: *const AaGaussian,
    lambda: f64,
    out: *mut *mut AaGaussian,
) -> AaStatus {
    guard(|| {
        let g = gaussian::additive_mix(handle(actor, "actor")?, handle(prior, "prior")?, lambda)?;
        store_gaussian(out, g)
    })
}

/// `KL(p || q)` in nats.
///
/// # Safety
/// `p` and `q` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_kl(p: *const AaGaussian, q: *const AaGaussian, out: *mut f64) -> AaStatus {
    guard(|| store(out, gaussian::gaussian_kl(handle(p, "p")?, handle(q, "q")?)?, "out"))
}

/// 2-Wasserstein distance.
///
/// # Safety
/// `p` and `q` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_gaussian_w2(p: *const AaGaussian, q: *const AaGaussian, out: *mut f64) -> AaStatus {
    guard(|| store(out, gaussian::gaussian_w2(handle(p, "p")?, handle(q, "q")?)?, "out"))
}

/// Compares PoE(alpha) with KL-Reg(alpha / (1 - alpha)) for one actor/prior pair.
///
/// # Safety
/// `actor` and `prior` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_equivalence_audit(
    actor: *const AaGaussian,
    prior: *const AaGaussian,
    alpha: f64,
    out: *mut AaEquivalence,
) -> AaStatus {
    guard(|| {
        let r = gaussian::equivalence_audit(handle(actor, "actor")?, handle(prior, "prior")?, alpha)?;
        let value = AaEquivalence {
            alpha: r.alpha,
            beta: r.beta,
            max_mean_abs_diff: r.max_mean_abs_diff,
            variance_identity_residual: r.variance_identity_residual,
        };
        store(out, value, "out")
    })
}

/// `alpha / (1 - alpha)` for `alpha` in (0, 1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_alpha_to_beta(alpha: f64, out: *mut f64) -> AaStatus {
    guard(|| store(out, gaussian::alpha_to_beta(alpha)?, "out"))
}

/// `beta / (1 + beta)` for `beta > 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_beta_to_alpha(beta: f64, out: *mut f64) -> AaStatus {
    guard(|| store(out, gaussian::beta_to_alpha(beta)?, "out"))
}

/// `min(1, sqrt(kl / 2))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_pinsker_tv_bound(kl: f64, out: *mut f64) -> AaStatus {
    guard(|| store(out, gaussian::pinsker_tv_bound(kl)?, "out"))
}

/// `2 gamma / (1 - gamma)^2`.
#[no_mangle]
pub extern "C" fn aa_cpi_penalty_coeff(gamma: f64) -> f64 {
    mdp::cpi_penalty_coeff(gamma)
}

unsafe fn policy(data: *const f64, n: usize, name: &'static str) -> Result<FinitePolicy, Fail> {
    Ok(FinitePolicy::new(input(data, n, name)?.to_vec())?)
}

/// Finite-action product of experts over `n` actions, written to `out`.
///
/// # Safety
/// `actor`, `prior` and `out` must each be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn aa_poe_finite(
    actor: *const f64,
    prior: *const f64,
    n: usize,
    alpha: f64,
    out: *mut f64,
) -> AaStatus {
    guard(|| {
        let r = finite::poe_finite(&policy(actor, n, "actor")?, &policy(prior, n, "prior")?, alpha)?;
        copy_out(r.probs(), out, n)
    })
}

/// `KL(p || q)` between two distributions over `n` actions.
///
/// # Safety
/// `p` and `q` must be valid for `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_finite_kl(p: *const f64, q: *const f64, n: usize, out: *mut f64) -> AaStatus {
    guard(|| store(out, finite::finite_kl(&policy(p, n, "p")?, &policy(q, n, "q")?)?, "out"))
}

/// Total-variation distance between two distributions over `n` actions.
///
/// # Safety
/// `p` and `q` must be valid for `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aa_tv_distance(p: *const f64, q: *const f64, n: usize, out: *mut f64) -> AaStatus {
    guard(|| store(out, finite::tv_distance(&policy(p, n, "p")?, &policy(q, n, "q")?)?, "out"))
}
