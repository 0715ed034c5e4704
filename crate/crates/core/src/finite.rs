//! Finite-action product-of-experts composition and its variational characterization.
//!
//! For a fixed state the refined policy is `pi(a) ∝ actor(a)^alpha * prior(a)^(1-alpha)`
//! on the common support `Γ = {a : actor(a) > 0, prior(a) > 0}`. It is the unique
//! maximizer of `F(pi) = E_pi[alpha log actor + (1-alpha) log prior] + H(pi)`, which
//! equals minus the weighted KL objective `alpha KL(pi||actor) + (1-alpha) KL(pi||prior)`.

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-10;

/// Largest action set the exhaustive simplex oracle will enumerate.
pub const MAX_ORACLE_ACTIONS: usize = 5;

/// Probability mass function over a fixed finite action set.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePolicy {
    probs: Vec<f64>,
}

impl FinitePolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("action set"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::NotProbability(format!("entry {p} is negative or non-finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::NotProbability(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::NotProbability("weights must be non-negative with positive sum".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("action set"));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn check_sizes(a: &FinitePolicy, b: &FinitePolicy) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", alpha, "must lie in (0, 1]"));
    }
    Ok(())
}

/// Indices where both actor and prior put positive mass.
pub fn effective_support(actor: &FinitePolicy, prior: &FinitePolicy) -> Vec<usize> {
    actor
        .probs
        .iter()
        .zip(&prior.probs)
        .enumerate()
        .filter(|(_, (a, p))| **a > 0.0 && **p > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// `alpha log actor(a) + (1-alpha) log prior(a)` on the support, `-inf` elsewhere.
fn log_weights(actor: &FinitePolicy, prior: &FinitePolicy, alpha: f64) -> Vec<f64> {
    actor
        .probs
        .iter()
        .zip(&prior.probs)
        .map(|(&a, &p)| {
            if a > 0.0 && p > 0.0 {
                alpha * a.ln() + (1.0 - alpha) * p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Finite-action PoE refinement. Fails with [`Error::EmptySupport`] when actor and
/// prior share no action.
pub fn poe_finite(actor: &FinitePolicy, prior: &FinitePolicy, alpha: f64) -> Result<FinitePolicy> {
    check_sizes(actor, prior)?;
    check_alpha(alpha)?;
    let logw = log_weights(actor, prior, alpha);
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let unnorm: Vec<f64> = logw
        .iter()
        .map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = unnorm.iter().sum();
    Ok(FinitePolicy {
        probs: unnorm.into_iter().map(|u| u / z).collect(),
    })
}

/// Log normalizer `log Σ_a actor(a)^alpha prior(a)^(1-alpha)` over the support.
pub fn log_partition(actor: &FinitePolicy, prior: &FinitePolicy, alpha: f64) -> Result<f64> {
    check_sizes(actor, prior)?;
    check_alpha(alpha)?;
    let logw = log_weights(actor, prior, alpha);
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let s: f64 = logw.iter().filter(|l| l.is_finite()).map(|l| (l - max).exp()).sum();
    Ok(max + s.ln())
}

/// Variational objective `F(candidate)`. Returns `-inf` when the candidate puts mass
/// outside the common support, where the objective is undefined.
pub fn variational_value(
    candidate: &FinitePolicy,
    actor: &FinitePolicy,
    prior: &FinitePolicy,
    alpha: f64,
) -> Result<f64> {
    check_sizes(actor, prior)?;
    check_sizes(candidate, actor)?;
    check_alpha(alpha)?;
    let logw = log_weights(actor, prior, alpha);
    let mut value = 0.0;
    for (&c, &lw) in candidate.probs.iter().zip(&logw) {
        if c == 0.0 {
            continue;
        }
        if !lw.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        value += c * (lw - c.ln());
    }
    Ok(value)
}

/// `KL(p || q)` over a finite action set; `+inf` when `p` is not absolutely continuous
/// with respect to `q`.
pub fn finite_kl(p: &FinitePolicy, q: &FinitePolicy) -> Result<f64> {
    check_sizes(p, q)?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

/// `alpha KL(candidate||actor) + (1-alpha) KL(candidate||prior)`; `+inf` outside the support.
pub fn weighted_kl_value(
    candidate: &FinitePolicy,
    actor: &FinitePolicy,
    prior: &FinitePolicy,
    alpha: f64,
) -> Result<f64> {
    check_sizes(actor, prior)?;
    check_alpha(alpha)?;
    let to_actor = finite_kl(candidate, actor)?;
    let to_prior = finite_kl(candidate, prior)?;
    if alpha == 1.0 {
        // the prior term carries zero weight but candidate must still live on Γ
        if to_prior.is_infinite() {
            return Ok(f64::INFINITY);
        }
        return Ok(to_actor);
    }
    Ok(alpha * to_actor + (1.0 - alpha) * to_prior)
}

/// Exhaustive simplex-grid maximizer of [`variational_value`], an independent oracle
/// for the closed form. Enumerates all points with coordinates in multiples of
/// `grid_step` supported on Γ; ties keep the first point in lexicographic order.
pub fn brute_force_barycenter(
    actor: &FinitePolicy,
    prior: &FinitePolicy,
    alpha: f64,
    grid_step: f64,
) -> Result<FinitePolicy> {
    check_sizes(actor, prior)?;
    check_alpha(alpha)?;
    if actor.len() > MAX_ORACLE_ACTIONS {
        return Err(Error::TooManyActions {
            found: actor.len(),
            max: MAX_ORACLE_ACTIONS,
        });
    }
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(Error::param("grid_step", grid_step, "must lie in (0, 0.1]"));
    }
    let steps = (1.0 / grid_step).round();
    if ((steps * grid_step) - 1.0).abs() > 1e-9 {
        return Err(Error::param("grid_step", grid_step, "must divide 1 evenly"));
    }
    let steps = steps as usize;
    let support = effective_support(actor, prior);
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }

    let logw = log_weights(actor, prior, alpha);
    let support_logw: Vec<f64> = support.iter().map(|&i| logw[i]).collect();
    // c * (logw - ln c) with c = k / steps, tabulated per support slot
    let table: Vec<Vec<f64>> = support_logw
        .iter()
        .map(|lw| {
            (0..=steps)
                .map(|k| {
                    if k == 0 {
                        0.0
                    } else {
                        let c = k as f64 / steps as f64;
                        c * (lw - c.ln())
                    }
                })
                .collect()
        })
        .collect();

    let mut best_value = f64::NEG_INFINITY;
    let mut best = vec![0usize; support.len()];
    let mut current = vec![0usize; support.len()];
    enumerate(&table, 0, steps, 0.0, &mut current, &mut best, &mut best_value);

    let mut probs = vec![0.0; actor.len()];
    for (slot, &idx) in support.iter().enumerate() {
        probs[idx] = best[slot] as f64 / steps as f64;
    }
    FinitePolicy::new(probs)
}

fn enumerate(
    table: &[Vec<f64>],
    slot: usize,
    remaining: usize,
    partial: f64,
    current: &mut [usize],
    best: &mut [usize],
    best_value: &mut f64,
) {
    if slot + 1 == table.len() {
        current[slot] = remaining;
        let value = partial + table[slot][remaining];
        if value > *best_value {
            *best_value = value;
            best.copy_from_slice(current);
        }
        return;
    }
    for k in 0..=remaining {
        current[slot] = k;
        enumerate(table, slot + 1, remaining - k, partial + table[slot][k], current, best, best_value);
    }
}

/// Total-variation distance `½ Σ |p - q|`.
pub fn tv_distance(p: &FinitePolicy, q: &FinitePolicy) -> Result<f64> {
    check_sizes(p, q)?;
    Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Result of composing with an estimated prior instead of the true one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluginStability {
    /// `F(pi_ref) - F(pi_hat_ref)` under the true objective; non-negative.
    pub objective_gap: f64,
    /// `2 (1 - alpha) max_a |log prior_hat(a) - log prior(a)|` over the support.
    pub bound: f64,
}

/// Plug-in prior stability: how much of the true objective is lost by refining with
/// `prior_hat`. Both priors must share the same support.
pub fn plugin_stability(
    actor: &FinitePolicy,
    prior: &FinitePolicy,
    prior_hat: &FinitePolicy,
    alpha: f64,
) -> Result<PluginStability> {
    check_sizes(prior, prior_hat)?;
    let exact = poe_finite(actor, prior, alpha)?;
    let plugin = poe_finite(actor, prior_hat, alpha)?;
    let mut eps: f64 = 0.0;
    for (&p, &ph) in prior.probs.iter().zip(&prior_hat.probs) {
        if (p > 0.0) != (ph > 0.0) {
            return Err(Error::StructuralMismatch(
                "estimated prior must share the true prior's support".into(),
            ));
        }
        if p > 0.0 {
            eps = eps.max((ph.ln() - p.ln()).abs());
        }
    }
    let objective_gap = variational_value(&exact, actor, prior, alpha)?
        - variational_value(&plugin, actor, prior, alpha)?;
    Ok(PluginStability {
        objective_gap,
        bound: 2.0 * (1.0 - alpha) * eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(v: &[f64]) -> FinitePolicy {
        FinitePolicy::new(v.to_vec()).unwrap()
    }

    #[test]
    fn validates_pmf() {
        assert!(FinitePolicy::new(vec![]).is_err());
        assert!(FinitePolicy::new(vec![0.5, 0.6]).is_err());
        assert!(FinitePolicy::new(vec![1.5, -0.5]).is_err());
        assert!(FinitePolicy::new(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn poe_uniform_actor_follows_sqrt_prior() {
        let actor = FinitePolicy::uniform(4).unwrap();
        let prior = fp(&[0.7, 0.1, 0.1, 0.1]);
        let r = poe_finite(&actor, &prior, 0.5).unwrap();
        let w = [0.7f64.sqrt(), 0.1f64.sqrt(), 0.1f64.sqrt(), 0.1f64.sqrt()];
        let z: f64 = w.iter().sum();
        for (got, wi) in r.probs().iter().zip(w) {
            assert!((got - wi / z).abs() < 1e-14);
        }
        assert!((r.probs()[0] - 0.46862).abs() < 1e-5);
        assert!((r.probs()[1] - 0.17713).abs() < 1e-5);
    }

    #[test]
    fn poe_preserves_actor_support() {
        let actor = fp(&[0.0, 0.5, 0.5]);
        for prior in [fp(&[0.8, 0.2, 0.0]), fp(&[0.98, 0.01, 0.01]), fp(&[0.0, 0.0, 1.0])] {
            for alpha in [0.01, 0.3, 0.5, 1.0] {
                assert_eq!(poe_finite(&actor, &prior, alpha).unwrap().probs()[0], 0.0);
            }
        }
    }

    #[test]
    fn poe_alpha_one_restricts_actor_to_support() {
        let actor = fp(&[0.2, 0.3, 0.5]);
        let full = fp(&[0.1, 0.1, 0.8]);
        let r = poe_finite(&actor, &full, 1.0).unwrap();
        for (a, b) in r.probs().iter().zip(actor.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let partial = fp(&[0.0, 0.5, 0.5]);
        let r = poe_finite(&actor, &partial, 1.0).unwrap();
        assert_eq!(r.probs()[0], 0.0);
        assert!((r.probs()[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn empty_support_is_an_error() {
        let actor = fp(&[1.0, 0.0]);
        let prior = fp(&[0.0, 1.0]);
        assert!(matches!(poe_finite(&actor, &prior, 0.5), Err(Error::EmptySupport)));
        assert!(matches!(
            brute_force_barycenter(&actor, &prior, 0.5, 0.05),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn variational_value_at_closed_form_is_log_partition() {
        let actor = fp(&[0.6, 0.3, 0.1]);
        let prior = fp(&[0.2, 0.3, 0.5]);
        for alpha in [0.1, 0.5, 0.9] {
            let r = poe_finite(&actor, &prior, alpha).unwrap();
            let f = variational_value(&r, &actor, &prior, alpha).unwrap();
            let z = log_partition(&actor, &prior, alpha).unwrap();
            assert!((f - z).abs() < 1e-14, "alpha {alpha}: {f} vs {z}");
        }
    }

    #[test]
    fn variational_value_trivial_cases() {
        let actor = fp(&[0.5, 0.25, 0.25]);
        assert!(variational_value(&actor, &actor, &actor, 1.0).unwrap().abs() < 1e-15);
        let u = FinitePolicy::uniform(5).unwrap();
        assert!(variational_value(&u, &u, &u, 0.4).unwrap().abs() < 1e-15);
        let outside = fp(&[0.5, 0.5, 0.0]);
        let narrow = fp(&[0.0, 0.5, 0.5]);
        assert_eq!(
            variational_value(&outside, &narrow, &actor, 0.5).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(
            weighted_kl_value(&outside, &narrow, &actor, 0.5).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn weighted_kl_examples() {
        let p = fp(&[0.2, 0.8]);
        assert_eq!(weighted_kl_value(&p, &p, &p, 0.3).unwrap(), 0.0);
        let q = fp(&[0.6, 0.4]);
        let w = weighted_kl_value(&q, &p, &q, 1.0).unwrap();
        assert!((w - finite_kl(&q, &p).unwrap()).abs() < 1e-15);
        assert!(w > 0.0);
    }

    #[test]
    fn oracle_worked_example() {
        let actor = fp(&[0.6, 0.3, 0.1]);
        let prior = fp(&[0.2, 0.3, 0.5]);
        let closed = poe_finite(&actor, &prior, 0.5).unwrap();
        let grid = brute_force_barycenter(&actor, &prior, 0.5, 0.01).unwrap();
        let linf = closed
            .probs()
            .iter()
            .zip(grid.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(linf <= 0.02, "{linf}");
    }

    #[test]
    fn oracle_endpoints() {
        let actor = fp(&[0.15, 0.35, 0.5]);
        let same = brute_force_barycenter(&actor, &actor, 0.4, 0.05).unwrap();
        let other = fp(&[0.6, 0.2, 0.2]);
        let at_one = brute_force_barycenter(&actor, &other, 1.0, 0.05).unwrap();
        for r in [same, at_one] {
            for (a, b) in r.probs().iter().zip(actor.probs()) {
                assert!((a - b).abs() <= 0.05 + 1e-12);
            }
        }
    }

    #[test]
    fn oracle_rejects_bad_grid() {
        let u = FinitePolicy::uniform(3).unwrap();
        assert!(brute_force_barycenter(&u, &u, 0.5, 0.0).is_err());
        assert!(brute_force_barycenter(&u, &u, 0.5, 0.2).is_err());
        assert!(brute_force_barycenter(&u, &u, 0.5, 0.03).is_err());
        let big = FinitePolicy::uniform(6).unwrap();
        assert!(matches!(
            brute_force_barycenter(&big, &big, 0.5, 0.1),
            Err(Error::TooManyActions { .. })
        ));
    }

    #[test]
    fn tv_examples() {
        let p = fp(&[0.7, 0.3]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_distance(&fp(&[1.0, 0.0]), &fp(&[0.0, 1.0])).unwrap(), 1.0);
        assert!((tv_distance(&p, &fp(&[0.4, 0.6])).unwrap() - 0.3).abs() < 1e-15);
        assert!(tv_distance(&p, &FinitePolicy::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn plugin_gap_within_bound() {
        let actor = fp(&[0.5, 0.3, 0.2]);
        let prior = fp(&[0.2, 0.2, 0.6]);
        let hat = fp(&[0.25, 0.15, 0.6]);
        let s = plugin_stability(&actor, &prior, &hat, 0.4).unwrap();
        assert!(s.objective_gap >= 0.0);
        assert!(s.objective_gap <= s.bound);
        let s0 = plugin_stability(&actor, &prior, &prior, 0.4).unwrap();
        assert_eq!(s0.objective_gap, 0.0);
        assert_eq!(s0.bound, 0.0);
    }
}
