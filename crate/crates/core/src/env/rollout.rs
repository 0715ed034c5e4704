use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{env_step, ComposedPolicy, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::goal::Components;
use crate::seeding::derive_seed;

/// Start state: at the origin of the track, lateral offset within a quarter of the
/// workspace, small random velocities.
pub(crate) fn random_start<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> EnvState {
    let d = config.action_dim;
    let h = 0.25 * config.workspace_halfwidth;
    let mut state = EnvState::at_rest(d);
    state.vel[0] = rng.random_range(0.0..0.5);
    for i in 1..d {
        state.pos[i] = rng.random_range(-h..h);
        state.vel[i] = rng.random_range(-0.5..0.5);
    }
    state
}

/// Start state for `(seed, episode)`. It does not depend on the method or goal, so
/// every method is evaluated from the same starts.
pub fn initial_state(config: &EnvConfig, seed: u64, episode: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("initial-state", &[seed, episode]));
    random_start(config, &mut rng)
}

/// Summary of one deterministic deployment episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env_id: String,
    pub method_id: String,
    pub goal_id: String,
    pub seed: u64,
    pub episode: u64,
    pub goal_weighted_return: f64,
    pub forward_sum: f64,
    pub control_sum: f64,
    pub alive_sum: f64,
    pub length: usize,
    /// Ended by leaving the workspace rather than by the step budget.
    pub terminated: bool,
    pub mean_kl_from_actor: f64,
}

impl EpisodeRecord {
    pub fn component_sums(&self) -> Components {
        [self.forward_sum, self.control_sum, self.alive_sum]
    }

    /// The fields that describe what happened, without the method label.
    pub fn outcome(&self) -> (u64, u64, u64, [u64; 3], usize, bool, u64) {
        (
            self.seed,
            self.episode,
            self.goal_weighted_return.to_bits(),
            self.component_sums().map(f64::to_bits),
            self.length,
            self.terminated,
            self.mean_kl_from_actor.to_bits(),
        )
    }
}

/// Per-step detail of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub components: Vec<Components>,
    pub kls: Vec<f64>,
    pub terminated: bool,
}

impl EpisodeTrace {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// Runs `policy` deterministically (mean action) from `start` until the episode ends.
pub fn run_episode(config: &EnvConfig, policy: &ComposedPolicy<'_>, start: EnvState) -> Result<EpisodeTrace> {
    let goal = *policy.goal();
    let mut trace = EpisodeTrace {
        observations: Vec::new(),
        rewards: Vec::new(),
        components: Vec::new(),
        kls: Vec::new(),
        terminated: false,
    };
    let mut state = start;
    loop {
        let obs = state.observation();
        let (action, kl) = policy.act(&obs)?;
        let step = env_step(config, &state, &action)?;
        trace.observations.push(obs);
        trace.rewards.push(goal.reward(&step.rc));
        trace.components.push(step.rc);
        trace.kls.push(kl);
        if step.done {
            trace.terminated = step.terminal;
            return Ok(trace);
        }
        state = step.next;
    }
}

fn record_from_trace(
    env_id: &str,
    goal_id: &str,
    method_id: &str,
    seed: u64,
    episode: u64,
    trace: &EpisodeTrace,
) -> EpisodeRecord {
    let mut sums = [0.0; 3];
    for rc in &trace.components {
        for (s, c) in sums.iter_mut().zip(rc) {
            *s += c;
        }
    }
    let n = trace.rewards.len();
    EpisodeRecord {
        env_id: env_id.to_string(),
        method_id: method_id.to_string(),
        goal_id: goal_id.to_string(),
        seed,
        episode,
        goal_weighted_return: trace.rewards.iter().sum(),
        forward_sum: sums[0],
        control_sum: sums[1],
        alive_sum: sums[2],
        length: n,
        terminated: trace.terminated,
        mean_kl_from_actor: trace.kls.iter().sum::<f64>() / n as f64,
    }
}

/// Evaluates one (method, goal) cell: `episodes_per_seed` episodes for every seed.
pub fn rollout(
    config: &EnvConfig,
    env_id: &str,
    goal_id: &str,
    policy: &ComposedPolicy<'_>,
    seeds: &[u64],
    episodes_per_seed: usize,
) -> Result<Vec<EpisodeRecord>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    if episodes_per_seed == 0 {
        return Err(Error::Empty("episodes per seed"));
    }
    let method_id = policy.spec().id();
    let mut out = Vec::with_capacity(seeds.len() * episodes_per_seed);
    for &seed in seeds {
        for ep in 0..episodes_per_seed as u64 {
            let trace = run_episode(config, policy, initial_state(config, seed, ep))?;
            out.push(record_from_trace(env_id, goal_id, &method_id, seed, ep, &trace));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{actor_policy, make_prior, KlConvention, MethodSpec, PriorKind};
    use crate::goal::Goal;

    #[test]
    fn record_counts_and_frozen_kl() {
        let cfg = EnvConfig::default();
        let actor = actor_policy(&cfg);
        let g = Goal::speed();
        let prior = make_prior(&cfg, PriorKind::Trained, &g, 0).unwrap();
        let frozen = ComposedPolicy::new(MethodSpec::Frozen, &actor, &prior, None, g, KlConvention::Poe).unwrap();
        let recs = rollout(&cfg, "pm", "G1", &frozen, &[0, 1, 2, 3, 4], 5).unwrap();
        assert_eq!(recs.len(), 25);
        for r in &recs {
            assert_eq!(r.mean_kl_from_actor, 0.0);
            assert!(r.length <= cfg.max_steps);
            let dot = g.reward(&r.component_sums());
            assert!((dot - r.goal_weighted_return).abs() < 1e-9);
        }
        assert!(rollout(&cfg, "pm", "G1", &frozen, &[], 5).is_err());
    }

    #[test]
    fn matched_pairs_are_bit_identical() {
        let cfg = EnvConfig::default();
        let actor = actor_policy(&cfg);
        for g in [Goal::speed(), Goal::efficient()] {
            let prior = make_prior(&cfg, PriorKind::Trained, &g, 0).unwrap();
            for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let beta = crate::gaussian::alpha_to_beta(alpha).unwrap();
                let poe = ComposedPolicy::new(MethodSpec::Poe { alpha }, &actor, &prior, None, g, KlConvention::Poe)
                    .unwrap();
                let kl = ComposedPolicy::new(MethodSpec::KlReg { beta }, &actor, &prior, None, g, KlConvention::Poe)
                    .unwrap();
                let a = rollout(&cfg, "pm", "g", &poe, &[0, 1], 2).unwrap();
                let b = rollout(&cfg, "pm", "g", &kl, &[0, 1], 2).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.outcome(), y.outcome());
                }
            }
        }
    }

    #[test]
    fn starts_depend_only_on_seed_and_episode() {
        let cfg = EnvConfig::default();
        assert_eq!(initial_state(&cfg, 3, 1), initial_state(&cfg, 3, 1));
        assert_ne!(initial_state(&cfg, 3, 1), initial_state(&cfg, 3, 2));
    }

    #[test]
    fn discounting() {
        let t = EpisodeTrace {
            observations: vec![],
            rewards: vec![1.0, 1.0, 1.0],
            components: vec![],
            kls: vec![],
            terminated: false,
        };
        assert!((t.discounted_return(0.5) - 1.75).abs() < 1e-15);
    }
}
