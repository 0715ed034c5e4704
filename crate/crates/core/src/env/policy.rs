use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::goal::Goal;

/// Scale that maps normalized controller parameters to action units. Parameter
/// noise and random initialization are specified in normalized units.
pub const PARAM_UNIT: f64 = 10.0;

/// Largest constant thrust the analytic controller will command.
const MAX_THRUST: f64 = 5.0;

const ACTOR_THRUST: f64 = 1.0;
const ACTOR_STD: f64 = 1.0;
const TRAINED_STD: f64 = 0.3;
const RANDOM_STD: f64 = 6.0;
const VELOCITY_GAIN: f64 = 1.0;
const LATERAL_KP: f64 = 2.0;
const LATERAL_KD: f64 = 2.0;
/// Per-parameter standard deviation of a random controller, normalized units.
const RANDOM_PARAM_SCALE: f64 = 0.1;

/// Gaussian policy whose mean is affine in the observation: `mean = W·obs + b`,
/// with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianPolicy {
    action_dim: usize,
    obs_dim: usize,
    /// Row-major `action_dim × obs_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    log_std: Vec<f64>,
}

impl LinearGaussianPolicy {
    pub fn new(
        action_dim: usize,
        obs_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        log_std: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != action_dim * obs_dim {
            return Err(Error::DimensionMismatch {
                expected: action_dim * obs_dim,
                found: weights.len(),
            });
        }
        for v in [&bias, &log_std] {
            if v.len() != action_dim {
                return Err(Error::DimensionMismatch {
                    expected: action_dim,
                    found: v.len(),
                });
            }
        }
        if weights.iter().chain(&bias).chain(&log_std).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(Self {
            action_dim,
            obs_dim,
            weights,
            bias,
            log_std,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: self.obs_dim,
                found: obs.len(),
            });
        }
        Ok((0..self.action_dim)
            .map(|i| {
                let row = &self.weights[i * self.obs_dim..(i + 1) * self.obs_dim];
                self.bias[i] + row.iter().zip(obs).map(|(w, o)| w * o).sum::<f64>()
            })
            .collect())
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<DiagGaussian> {
        let var = self.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        DiagGaussian::new(self.mean(obs)?, var)
    }

    /// Parameters in normalized units: weights and bias divided by [`PARAM_UNIT`],
    /// followed by the log standard deviations.
    pub fn normalized_params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|x| x / PARAM_UNIT)
            .chain(self.log_std.iter().copied())
            .collect()
    }

    pub fn from_normalized(&self, params: &[f64]) -> Result<Self> {
        let nw = self.weights.len();
        let na = self.action_dim;
        if params.len() != nw + 2 * na {
            return Err(Error::DimensionMismatch {
                expected: nw + 2 * na,
                found: params.len(),
            });
        }
        Self::new(
            na,
            self.obs_dim,
            params[..nw].iter().map(|x| x * PARAM_UNIT).collect(),
            params[nw..nw + na].iter().map(|x| x * PARAM_UNIT).collect(),
            params[nw + na..].to_vec(),
        )
    }
}

/// Velocity-tracking thrust plus lateral PD stabilization, in action units.
fn tracking_controller(
    config: &EnvConfig,
    thrust: f64,
    velocity_gain: f64,
    std: f64,
) -> LinearGaussianPolicy {
    let d = config.action_dim;
    let n_obs = config.obs_dim();
    let mut weights = vec![0.0; d * n_obs];
    let mut bias = vec![0.0; d];
    // steady state v = thrust / drag; track it with gain k: a = thrust + k (v* - v)
    let k = if config.drag > 0.0 { velocity_gain } else { 0.0 };
    let target = if config.drag > 0.0 { thrust / config.drag } else { 0.0 };
    bias[0] = thrust + k * target;
    weights[0] = -k;
    for i in 1..d {
        let row = i * n_obs;
        // obs layout: [v0, p1..p_{d-1}, v1..v_{d-1}]
        weights[row + i] = -LATERAL_KP;
        weights[row + (d - 1) + i] = -LATERAL_KD;
    }
    LinearGaussianPolicy::new(d, n_obs, weights, bias, vec![std.ln(); d])
        .expect("controller construction is dimensionally consistent")
}

/// The frozen actor: moderate forward thrust, lateral stabilization, unit std.
pub fn actor_policy(config: &EnvConfig) -> LinearGaussianPolicy {
    tracking_controller(config, ACTOR_THRUST, VELOCITY_GAIN, ACTOR_STD)
}

/// Best constant forward thrust for `goal` over the step budget.
///
/// Under constant thrust `u` the forward speed is affine in `u`, so the forward part of
/// the return is `g0·K·u - g1·T·u²` with `K = Σ_t ∂v_t/∂u`, maximized at
/// `u = g0·K / (2·g1·T)`. Capped at [`MAX_THRUST`].
pub fn goal_thrust(config: &EnvConfig, goal: &Goal) -> f64 {
    let [g0, g1, _] = *goal.weights();
    if g0 <= 0.0 {
        return 0.0;
    }
    if g1 <= 0.0 {
        return MAX_THRUST;
    }
    let r = 1.0 - config.dt * config.drag;
    let mut dv = 0.0;
    let mut k = 0.0;
    for _ in 0..config.max_steps {
        dv = r * dv + config.dt;
        k += dv;
    }
    (g0 * k / (2.0 * g1 * config.max_steps as f64)).min(MAX_THRUST)
}

/// Goal-optimal open-loop controller: constant forward thrust, no lateral action.
/// Lateral drift from any start state stays inside the workspace, so lateral control
/// only costs reward.
fn goal_controller(config: &EnvConfig, goal: &Goal) -> LinearGaussianPolicy {
    let d = config.action_dim;
    let mut bias = vec![0.0; d];
    bias[0] = goal_thrust(config, goal);
    LinearGaussianPolicy::new(d, config.obs_dim(), vec![0.0; d * config.obs_dim()], bias, vec![TRAINED_STD.ln(); d])
        .expect("controller construction is dimensionally consistent")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorKind {
    /// Analytic goal-optimal open-loop controller with a tight action distribution.
    Trained,
    /// Parameter-space midpoint between the trained and the random controller.
    Undertrained,
    /// Trained controller with Gaussian parameter noise of this scale (normalized units).
    Noisy(f64),
    /// Seeded random linear controller with a wide action distribution.
    Random,
}

impl PriorKind {
    pub fn id(&self) -> &'static str {
        match self {
            PriorKind::Trained => "trained",
            PriorKind::Undertrained => "undertrained",
            PriorKind::Noisy(_) => "noisy",
            PriorKind::Random => "random",
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    /// Parses `trained`, `undertrained`, `random`, `noisy` (σ = 0.05) or `noisy:<σ>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trained" => Ok(PriorKind::Trained),
            "undertrained" => Ok(PriorKind::Undertrained),
            "random" => Ok(PriorKind::Random),
            "noisy" => Ok(PriorKind::Noisy(0.05)),
            other => match other.strip_prefix("noisy:").map(str::parse::<f64>) {
                Some(Ok(sigma)) => Ok(PriorKind::Noisy(sigma)),
                _ => Err(Error::Config(format!("unknown prior variant `{other}`"))),
            },
        }
    }
}

fn random_controller(config: &EnvConfig, seed: u64) -> LinearGaussianPolicy {
    let template = tracking_controller(config, 0.0, 0.0, RANDOM_STD);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = template.normalized_params();
    let n_mean = params.len() - config.action_dim;
    for p in &mut params[..n_mean] {
        let z: f64 = StandardNormal.sample(&mut rng);
        *p = RANDOM_PARAM_SCALE * z;
    }
    template
        .from_normalized(&params)
        .expect("same layout as template")
}

/// Builds one deployment-prior variant for `goal`. `seed` drives the random draws of
/// the random, undertrained and noisy variants.
pub fn make_prior(
    config: &EnvConfig,
    kind: PriorKind,
    goal: &Goal,
    seed: u64,
) -> Result<LinearGaussianPolicy> {
    config.validate()?;
    let trained = goal_controller(config, goal);
    match kind {
        PriorKind::Trained => Ok(trained),
        PriorKind::Random => Ok(random_controller(config, seed)),
        PriorKind::Undertrained => {
            let random = random_controller(config, seed).normalized_params();
            let mid: Vec<f64> = trained
                .normalized_params()
                .iter()
                .zip(&random)
                .map(|(t, r)| 0.5 * t + 0.5 * r)
                .collect();
            trained.from_normalized(&mid)
        }
        PriorKind::Noisy(sigma) => {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::param("sigma", sigma, "must be positive"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<f64> = trained
                .normalized_params()
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p + sigma * z
                })
                .collect();
            trained.from_normalized(&noisy)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::gaussian_kl;

    #[test]
    fn actor_tracks_unit_speed_and_stabilizes() {
        let cfg = EnvConfig::default();
        let actor = actor_policy(&cfg);
        // at v0 = 1 and centered, the actor commands exactly the drag-balancing thrust
        assert_eq!(actor.mean(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let m = actor.mean(&[1.0, 0.5, 0.0]).unwrap();
        assert_eq!(m[1], -1.0);
    }

    #[test]
    fn trained_thrust_matches_closed_form() {
        // K = (T - S)/drag with S = Σ_{t=1..T} r^t = r(1 - r^T)/(1 - r), r = 1 - dt·drag
        let cfg = EnvConfig::default();
        let t = cfg.max_steps as f64;
        let r = 1.0 - cfg.dt * cfg.drag;
        let s = r * (1.0 - r.powf(t)) / (1.0 - r);
        let oracle = |g: &Goal| {
            let [g0, g1, _] = *g.weights();
            g0 * (t - s) / (2.0 * g1 * cfg.drag * t)
        };
        for g in [Goal::speed(), Goal::balanced(), Goal::efficient()] {
            let p = make_prior(&cfg, PriorKind::Trained, &g, 0).unwrap();
            for obs in [[0.0, 0.0, 0.0], [3.0, 1.0, -1.0]] {
                let m = p.mean(&obs).unwrap();
                assert!((m[0] - oracle(&g)).abs() < 1e-12);
                assert_eq!(m[1], 0.0);
            }
        }
        // the efficiency goal damps thrust well below the actor's cruise thrust
        let u3 = goal_thrust(&cfg, &Goal::efficient());
        assert!(u3 < 0.05);
        let free = EnvConfig { drag: 0.0, ..EnvConfig::default() };
        assert!(goal_thrust(&free, &Goal::speed()) <= MAX_THRUST);
    }

    #[test]
    fn noisy_prior_is_reproducible() {
        let cfg = EnvConfig::default();
        let g = Goal::balanced();
        let a = make_prior(&cfg, PriorKind::Noisy(0.05), &g, 17).unwrap();
        let b = make_prior(&cfg, PriorKind::Noisy(0.05), &g, 17).unwrap();
        let c = make_prior(&cfg, PriorKind::Noisy(0.05), &g, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(make_prior(&cfg, PriorKind::Noisy(0.0), &g, 1).is_err());
    }

    #[test]
    fn undertrained_is_parameter_midpoint() {
        let cfg = EnvConfig::default();
        let g = Goal::speed();
        let t = make_prior(&cfg, PriorKind::Trained, &g, 3).unwrap().normalized_params();
        let r = make_prior(&cfg, PriorKind::Random, &g, 3).unwrap().normalized_params();
        let u = make_prior(&cfg, PriorKind::Undertrained, &g, 3).unwrap().normalized_params();
        for i in 0..t.len() {
            assert!((u[i] - 0.5 * (t[i] + r[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn random_prior_is_farther_from_actor() {
        let cfg = EnvConfig::default();
        let actor = actor_policy(&cfg);
        let states = [[0.0, 0.0, 0.0], [1.0, 0.3, -0.2], [0.5, -1.0, 0.4], [2.0, 1.5, 0.0]];
        let mean_kl = |kind: PriorKind| {
            let mut total = 0.0;
            for (gi, g) in [Goal::speed(), Goal::balanced(), Goal::efficient()].iter().enumerate() {
                let p = make_prior(&cfg, kind, g, 9 + gi as u64).unwrap();
                for s in &states {
                    let d = p.distribution(s).unwrap();
                    total += gaussian_kl(&d, &actor.distribution(s).unwrap()).unwrap();
                }
            }
            total / (3 * states.len()) as f64
        };
        assert!(mean_kl(PriorKind::Random) > mean_kl(PriorKind::Trained));
    }

    #[test]
    fn parses_variants() {
        assert_eq!("noisy".parse::<PriorKind>().unwrap(), PriorKind::Noisy(0.05));
        assert_eq!("noisy:0.2".parse::<PriorKind>().unwrap(), PriorKind::Noisy(0.2));
        assert!("bogus".parse::<PriorKind>().is_err());
    }
}
