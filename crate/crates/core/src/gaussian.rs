//! Diagonal-Gaussian action distributions and their closed-form composition rules.
//!
//! All composition happens in precision space. The product-of-experts rule
//! blends the actor and prior precisions convexly with weight `alpha`; the
//! KL-regularized rule weights the actor precision by `beta` against a unit
//! weight on the prior. With `beta = alpha / (1 - alpha)` both rules share the
//! same mean and their variances differ by the scalar `1 + beta`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal Gaussian over an action vector. Stores variances, not standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("gaussian mean"));
        }
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: var.len(),
            });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("gaussian mean"));
        }
        if let Some((index, &value)) = var
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveVariance { index, value });
        }
        Ok(Self { mean, var })
    }

    /// Isotropic helper: every dimension gets the same variance.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![var; n])
    }

    pub fn from_std(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let var = std.iter().map(|s| s * s).collect();
        Self::new(mean, var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }

    pub fn precision(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.recip()).collect()
    }

    /// Deterministic deployment action.
    pub fn mode(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.var)
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (ln_2pi + v.ln() + (xi - m) * (xi - m) / v))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }

    pub(crate) fn from_parts_unchecked(mean: Vec<f64>, var: Vec<f64>) -> Self {
        debug_assert!(var.iter().all(|v| *v > 0.0));
        Self { mean, var }
    }
}

fn check_same_dim(a: &DiagGaussian, b: &DiagGaussian) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Precision-weighted fusion `w_a * actor + w_p * prior` in natural parameters.
fn fuse(actor: &DiagGaussian, prior: &DiagGaussian, w_actor: f64, w_prior: f64) -> DiagGaussian {
    let mut mean = Vec::with_capacity(actor.dim());
    let mut var = Vec::with_capacity(actor.dim());
    for i in 0..actor.dim() {
        let pa = w_actor / actor.var[i];
        let pp = w_prior / prior.var[i];
        let total = pa + pp;
        // anchored at the actor mean so equal means fuse to exactly that mean
        mean.push(actor.mean[i] + (pp / total) * (prior.mean[i] - actor.mean[i]));
        var.push(1.0 / total);
    }
    DiagGaussian::from_parts_unchecked(mean, var)
}

/// Product-of-experts refinement `actor^alpha * prior^(1-alpha)`, renormalized.
pub fn poe_compose(actor: &DiagGaussian, prior: &DiagGaussian, alpha: f64) -> Result<DiagGaussian> {
    check_same_dim(actor, prior)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", alpha, "must lie in [0, 1]"));
    }
    if alpha == 1.0 {
        return Ok(actor.clone());
    }
    if alpha == 0.0 {
        return Ok(prior.clone());
    }
    Ok(fuse(actor, prior, alpha, 1.0 - alpha))
}

/// Closed-form minimizer of `E[-log prior] + beta * KL(pi || actor)`.
pub fn klreg_compose(actor: &DiagGaussian, prior: &DiagGaussian, beta: f64) -> Result<DiagGaussian> {
    check_same_dim(actor, prior)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::param("beta", beta, "must be positive and finite"));
    }
    Ok(fuse(actor, prior, beta, 1.0))
}

pub fn alpha_to_beta(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", alpha, "must lie strictly inside (0, 1)"));
    }
    Ok(alpha / (1.0 - alpha))
}

pub fn beta_to_alpha(beta: f64) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::param("beta", beta, "must be positive and finite"));
    }
    Ok(beta / (1.0 + beta))
}

/// Per-state agreement between PoE(alpha) and KL-Reg(alpha / (1 - alpha)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceRecord {
    pub alpha: f64,
    pub beta: f64,
    pub max_mean_abs_diff: f64,
    /// `max_i |var_poe - (1 + beta) var_klreg| / var_poe`.
    pub variance_identity_residual: f64,
}

pub fn equivalence_audit(
    actor: &DiagGaussian,
    prior: &DiagGaussian,
    alpha: f64,
) -> Result<EquivalenceRecord> {
    let beta = alpha_to_beta(alpha)?;
    let poe = poe_compose(actor, prior, alpha)?;
    let kl = klreg_compose(actor, prior, beta)?;
    let max_mean_abs_diff = poe
        .mean
        .iter()
        .zip(&kl.mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let variance_identity_residual = poe
        .var
        .iter()
        .zip(&kl.var)
        .map(|(vp, vk)| (vp - (1.0 + beta) * vk).abs() / vp)
        .fold(0.0, f64::max);
    Ok(EquivalenceRecord {
        alpha,
        beta,
        max_mean_abs_diff,
        variance_identity_residual,
    })
}

/// Additive mix: interpolate means and standard deviations with weight `lambda` on the prior.
pub fn additive_mix(actor: &DiagGaussian, prior: &DiagGaussian, lambda: f64) -> Result<DiagGaussian> {
    check_same_dim(actor, prior)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param("lambda", lambda, "must lie in [0, 1]"));
    }
    if lambda == 0.0 {
        return Ok(actor.clone());
    }
    if lambda == 1.0 {
        return Ok(prior.clone());
    }
    let mean = actor
        .mean
        .iter()
        .zip(&prior.mean)
        .map(|(a, p)| (1.0 - lambda) * a + lambda * p)
        .collect();
    let var = actor
        .var
        .iter()
        .zip(&prior.var)
        .map(|(va, vp)| {
            let s = (1.0 - lambda) * va.sqrt() + lambda * vp.sqrt();
            s * s
        })
        .collect();
    Ok(DiagGaussian::from_parts_unchecked(mean, var))
}

/// `KL(p || q)` in nats.
pub fn gaussian_kl(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_same_dim(p, q)?;
    let mut kl = 0.0;
    for i in 0..p.dim() {
        // r - 1 - ln r, written to stay accurate when r is close to 1
        let x = p.var[i] / q.var[i] - 1.0;
        let var_term = x - x.ln_1p();
        let d = p.mean[i] - q.mean[i];
        kl += 0.5 * (var_term + d * d / q.var[i]);
    }
    Ok(kl.max(0.0))
}

/// 2-Wasserstein distance between diagonal Gaussians.
pub fn gaussian_w2(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_same_dim(p, q)?;
    let sq: f64 = (0..p.dim())
        .map(|i| {
            let dm = p.mean[i] - q.mean[i];
            let ds = p.var[i].sqrt() - q.var[i].sqrt();
            dm * dm + ds * ds
        })
        .sum();
    Ok(sq.sqrt())
}

/// Transportation-inequality bound `W2(p, reference) <= sqrt(2 * C * KL(p || reference))`
/// with `C` the largest reference variance.
pub fn transport_kl_bound(p: &DiagGaussian, reference: &DiagGaussian) -> Result<f64> {
    let kl = gaussian_kl(p, reference)?;
    let c = reference.var.iter().copied().fold(0.0, f64::max);
    Ok((2.0 * c * kl).sqrt())
}

/// Pinsker bound on total variation, clamped to 1.
pub fn pinsker_tv_bound(kl: f64) -> Result<f64> {
    if kl.is_nan() || kl < 0.0 {
        return Err(Error::param("kl", kl, "must be non-negative"));
    }
    Ok((0.5 * kl).sqrt().min(1.0))
}

/// Monte Carlo total-variation estimate.
///
/// Uses `TV(p, q) = E_{x ~ (p+q)/2} [ |p(x) - q(x)| / (p(x) + q(x)) ]`. The
/// integrand equals `|tanh((log p(x) - log q(x)) / 2)|`, so it is bounded in
/// [0, 1] and exactly zero when `p == q`. Draws alternate between the two
/// mixture components (stratified mixture sampling); an odd final draw picks
/// its component with a fair coin.
pub fn mc_tv_estimate(p: &DiagGaussian, q: &DiagGaussian, n_samples: usize, seed: u64) -> Result<f64> {
    check_same_dim(p, q)?;
    if n_samples == 0 {
        return Err(Error::Empty("monte carlo sample count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let integrand = |x: &[f64]| ((p.log_density(x) - q.log_density(x)) * 0.5).tanh().abs();

    let pairs = n_samples / 2;
    let (mut sum_p, mut sum_q) = (0.0, 0.0);
    for _ in 0..pairs {
        sum_p += integrand(&p.sample(&mut rng));
        sum_q += integrand(&q.sample(&mut rng));
    }
    if n_samples % 2 == 1 {
        let from_p: bool = rng.random();
        let x = if from_p { p.sample(&mut rng) } else { q.sample(&mut rng) };
        let h = integrand(&x);
        if pairs == 0 {
            return Ok(h);
        }
        // Fold the odd draw into its own stratum.
        let n_p = pairs + usize::from(from_p);
        let n_q = pairs + usize::from(!from_p);
        if from_p {
            sum_p += h;
        } else {
            sum_q += h;
        }
        return Ok((0.5 * (sum_p / n_p as f64 + sum_q / n_q as f64)).clamp(0.0, 1.0));
    }
    Ok((0.5 * (sum_p + sum_q) / pairs as f64).clamp(0.0, 1.0))
}
