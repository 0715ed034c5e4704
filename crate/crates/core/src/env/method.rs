use std::fmt;

use serde::{Deserialize, Serialize};

use super::{awr_step, LinearCritic, LinearGaussianPolicy};
use crate::error::{Error, Result};
use crate::gaussian::{additive_mix, gaussian_kl, klreg_compose, poe_compose, DiagGaussian};
use crate::goal::Goal;

/// One deployment-time composition rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Frozen,
    PriorOnly,
    Additive { lambda: f64 },
    Poe { alpha: f64 },
    KlReg { beta: f64 },
    Awr { beta: f64, clip: f64 },
}

impl MethodSpec {
    pub fn family(&self) -> &'static str {
        match self {
            MethodSpec::Frozen => "frozen",
            MethodSpec::PriorOnly => "prior_only",
            MethodSpec::Additive { .. } => "additive",
            MethodSpec::Poe { .. } => "poe",
            MethodSpec::KlReg { .. } => "klreg",
            MethodSpec::Awr { .. } => "awr",
        }
    }

    /// The family's operating-point parameter (λ, α or β), if any.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            MethodSpec::Frozen | MethodSpec::PriorOnly => None,
            MethodSpec::Additive { lambda } => Some(lambda),
            MethodSpec::Poe { alpha } => Some(alpha),
            MethodSpec::KlReg { beta } | MethodSpec::Awr { beta, .. } => Some(beta),
        }
    }

    /// Stable identifier used in CSV output, e.g. `poe_0.5` or `klreg_2.333`; the
    /// parameter is printed to three decimals.
    pub fn id(&self) -> String {
        match self.parameter() {
            Some(p) => format!("{}_{}", self.family(), short_decimal(p)),
            None => self.family().to_string(),
        }
    }

    pub fn needs_critic(&self) -> bool {
        matches!(self, MethodSpec::Awr { .. })
    }
}

fn short_decimal(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Which covariance the KL-regularized rule reports when measuring divergence from the
/// actor. Both conventions share the same mean, so deployed actions do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlConvention {
    /// Report the KL-regularized policy with the PoE covariance `(1+β) Σ_KL`.
    #[default]
    Poe,
    /// Report the KL-regularized policy with its own covariance `Σ_KL`.
    Native,
}

/// Emulates a single-precision policy head: every reported statistic is rounded to `f32`.
fn round_head(d: &DiagGaussian) -> DiagGaussian {
    let r = |v: &[f64]| v.iter().map(|x| *x as f32 as f64).collect::<Vec<_>>();
    DiagGaussian::new(r(d.mean()), r(d.var())).expect("rounding keeps variances positive")
}

/// A composition rule bound to an actor, a goal-specific prior and optionally a critic.
#[derive(Debug, Clone)]
pub struct ComposedPolicy<'a> {
    spec: MethodSpec,
    actor: &'a LinearGaussianPolicy,
    prior: &'a LinearGaussianPolicy,
    critic: Option<&'a LinearCritic>,
    goal: Goal,
    convention: KlConvention,
}

impl<'a> ComposedPolicy<'a> {
    pub fn new(
        spec: MethodSpec,
        actor: &'a LinearGaussianPolicy,
        prior: &'a LinearGaussianPolicy,
        critic: Option<&'a LinearCritic>,
        goal: Goal,
        convention: KlConvention,
    ) -> Result<Self> {
        if spec.needs_critic() && critic.is_none() {
            return Err(Error::MissingCritic(spec.id()));
        }
        if actor.action_dim() != prior.action_dim() || actor.obs_dim() != prior.obs_dim() {
            return Err(Error::DimensionMismatch {
                expected: actor.action_dim(),
                found: prior.action_dim(),
            });
        }
        Ok(Self {
            spec,
            actor,
            prior,
            critic,
            goal,
            convention,
        })
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    /// The composed stochastic policy at full precision.
    pub fn distribution(&self, obs: &[f64]) -> Result<DiagGaussian> {
        let actor = self.actor.distribution(obs)?;
        match self.spec {
            MethodSpec::Frozen => Ok(actor),
            MethodSpec::PriorOnly => self.prior.distribution(obs),
            MethodSpec::Additive { lambda } => additive_mix(&actor, &self.prior.distribution(obs)?, lambda),
            MethodSpec::Poe { alpha } => poe_compose(&actor, &self.prior.distribution(obs)?, alpha),
            MethodSpec::KlReg { beta } => {
                let kl = klreg_compose(&actor, &self.prior.distribution(obs)?, beta)?;
                match self.convention {
                    KlConvention::Native => Ok(kl),
                    KlConvention::Poe => {
                        let var = kl.var().iter().map(|v| v * (1.0 + beta)).collect();
                        DiagGaussian::new(kl.mean().to_vec(), var)
                    }
                }
            }
            MethodSpec::Awr { beta, clip } => {
                let critic = self.critic.ok_or_else(|| Error::MissingCritic(self.spec.id()))?;
                let mean = awr_step(&actor, critic, obs, &self.goal, beta, clip)?;
                DiagGaussian::new(mean, actor.var().to_vec())
            }
        }
    }

    /// Deterministic action (the rounded mean) and `KL(composed ‖ actor)` at `obs`.
    pub fn act(&self, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let composed = round_head(&self.distribution(obs)?);
        let actor = round_head(&self.actor.distribution(obs)?);
        let kl = gaussian_kl(&composed, &actor)?;
        Ok((composed.mean().to_vec(), kl))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{actor_policy, make_prior, EnvConfig, FeatureSpec, PriorKind};

    fn fixture() -> (LinearGaussianPolicy, LinearGaussianPolicy) {
        let cfg = EnvConfig::default();
        (
            actor_policy(&cfg),
            make_prior(&cfg, PriorKind::Trained, &Goal::balanced(), 0).unwrap(),
        )
    }

    const PROBES: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.2, 0.4, -0.3], [0.3, -1.5, 0.9], [2.5, 1.0, 1.0]];

    #[test]
    fn ids() {
        assert_eq!(MethodSpec::Poe { alpha: 0.5 }.id(), "poe_0.5");
        assert_eq!(MethodSpec::KlReg { beta: 2.333 }.id(), "klreg_2.333");
        assert_eq!(MethodSpec::KlReg { beta: 1.0 / 9.0 }.id(), "klreg_0.111");
        assert_eq!(MethodSpec::KlReg { beta: 9.0 }.id(), "klreg_9");
        assert_eq!(MethodSpec::Frozen.id(), "frozen");
    }

    #[test]
    fn frozen_is_actor_with_zero_kl() {
        let (actor, prior) = fixture();
        let p = ComposedPolicy::new(MethodSpec::Frozen, &actor, &prior, None, Goal::balanced(), KlConvention::Poe)
            .unwrap();
        for s in PROBES {
            let (a, kl) = p.act(&s).unwrap();
            let m: Vec<f64> = actor.mean(&s).unwrap().iter().map(|x| *x as f32 as f64).collect();
            assert_eq!(a, m);
            assert_eq!(kl, 0.0);
        }
    }

    #[test]
    fn matched_pair_acts_identically() {
        let (actor, prior) = fixture();
        let g = Goal::balanced();
        let poe = ComposedPolicy::new(MethodSpec::Poe { alpha: 0.5 }, &actor, &prior, None, g, KlConvention::Poe)
            .unwrap();
        let kl = ComposedPolicy::new(MethodSpec::KlReg { beta: 1.0 }, &actor, &prior, None, g, KlConvention::Poe)
            .unwrap();
        for s in PROBES {
            assert_eq!(poe.act(&s).unwrap(), kl.act(&s).unwrap());
        }
    }

    #[test]
    fn additive_one_is_prior_mean() {
        let (actor, prior) = fixture();
        let p = ComposedPolicy::new(
            MethodSpec::Additive { lambda: 1.0 },
            &actor,
            &prior,
            None,
            Goal::balanced(),
            KlConvention::Poe,
        )
        .unwrap();
        for s in PROBES {
            assert_eq!(p.distribution(&s).unwrap().mean(), prior.mean(&s).unwrap().as_slice());
        }
    }

    #[test]
    fn awr_requires_critic() {
        let (actor, prior) = fixture();
        let spec = MethodSpec::Awr { beta: 1.0, clip: 1.0 };
        let err = ComposedPolicy::new(spec, &actor, &prior, None, Goal::balanced(), KlConvention::Poe);
        assert!(matches!(err, Err(Error::MissingCritic(_))));
        let critic = LinearCritic::zero(FeatureSpec::new(3, 2));
        assert!(ComposedPolicy::new(spec, &actor, &prior, Some(&critic), Goal::balanced(), KlConvention::Poe).is_ok());
    }

    #[test]
    fn kl_ordering_follows_covariance_law() {
        // with prior variance below actor variance: KL(prior) ≥ KL(poe) and the
        // native KL-regularized policy (variance shrunk by 1+β) sits farther than PoE
        let cfg = EnvConfig::default();
        let actor = actor_policy(&cfg);
        for g in [Goal::speed(), Goal::balanced(), Goal::efficient()] {
            let prior = make_prior(&cfg, PriorKind::Trained, &g, 0).unwrap();
            for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let beta = alpha / (1.0 - alpha);
                let mk = |spec| ComposedPolicy::new(spec, &actor, &prior, None, g, KlConvention::Native).unwrap();
                let only = mk(MethodSpec::PriorOnly);
                let poe = mk(MethodSpec::Poe { alpha });
                let kl = mk(MethodSpec::KlReg { beta });
                for s in PROBES {
                    let k_prior = only.act(&s).unwrap().1;
                    let k_poe = poe.act(&s).unwrap().1;
                    let k_kl = kl.act(&s).unwrap().1;
                    assert!(k_prior >= k_poe, "{g:?} {alpha}");
                    assert!(k_kl >= k_poe, "{g:?} {alpha}");
                }
            }
        }
    }
}
