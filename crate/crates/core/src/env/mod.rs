//! Deterministic point-mass control task with three reward components.
//!
//! Axis 0 is an unbounded forward track; axes `1..` are lateral and bounded by the
//! workspace. The agent observes forward velocity and the lateral position/velocity,
//! never its forward position, so policies are stationary along the track.

mod critic;
mod method;
mod policy;
mod risk;
mod rollout;

pub use critic::{awr_step, fqe_train, FeatureSpec, FqeConfig, FqeReport, GoalSampler, LinearCritic};
pub use method::{ComposedPolicy, KlConvention, MethodSpec};
pub use policy::{actor_policy, make_prior, LinearGaussianPolicy, PriorKind};
pub use risk::{quantile_risk, risk_from_scores, RiskRates};
pub use rollout::{initial_state, rollout, run_episode, EpisodeRecord, EpisodeTrace};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal::Components;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub action_dim: usize,
    /// Integration step in seconds.
    pub dt: f64,
    pub workspace_halfwidth: f64,
    pub max_steps: usize,
    /// Linear velocity damping coefficient.
    pub drag: f64,
    /// End the episode when a lateral coordinate leaves the workspace.
    pub terminate_on_exit: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            action_dim: 2,
            dt: 0.05,
            workspace_halfwidth: 2.0,
            max_steps: 200,
            drag: 1.0,
            terminate_on_exit: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.action_dim == 0 {
            return Err(Error::Config("action_dim must be at least 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", self.dt, "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if !(self.drag.is_finite() && self.drag >= 0.0) {
            return Err(Error::param("drag", self.drag, "must be non-negative"));
        }
        if !(self.workspace_halfwidth.is_finite() && self.workspace_halfwidth > 0.0) {
            return Err(Error::param(
                "workspace_halfwidth",
                self.workspace_halfwidth,
                "must be positive",
            ));
        }
        Ok(())
    }

    /// Length of the observation vector: forward velocity plus lateral position and velocity.
    pub fn obs_dim(&self) -> usize {
        2 * self.action_dim - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    pub fn at_rest(dim: usize) -> Self {
        Self {
            pos: vec![0.0; dim],
            vel: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(2 * self.pos.len() - 1);
        obs.push(self.vel[0]);
        obs.extend_from_slice(&self.pos[1..]);
        obs.extend_from_slice(&self.vel[1..]);
        obs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub rc: Components,
    /// Episode is over, either by termination or by the step budget.
    pub done: bool,
    /// True termination (left the workspace); excludes running out of steps.
    pub terminal: bool,
}

/// Semi-implicit Euler step of a damped double integrator.
pub fn env_step(config: &EnvConfig, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
    let d = config.action_dim;
    if action.len() != d || state.pos.len() != d || state.vel.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: action.len(),
        });
    }
    if action.iter().chain(&state.pos).chain(&state.vel).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("state or action"));
    }
    let mut next = EnvState {
        pos: state.pos.clone(),
        vel: state.vel.clone(),
        t: state.t + 1,
    };
    for (i, a) in action.iter().enumerate().take(d) {
        next.vel[i] += config.dt * (a - config.drag * state.vel[i]);
        next.pos[i] += config.dt * next.vel[i];
    }
    let control: f64 = action.iter().map(|a| a * a).sum();
    let rc = [next.vel[0], -control, 1.0];
    let exited = next.pos[1..]
        .iter()
        .any(|p| p.abs() > config.workspace_halfwidth);
    let terminal = config.terminate_on_exit && exited;
    Ok(StepOutcome {
        done: terminal || next.t >= config.max_steps,
        terminal,
        next,
        rc,
    })
}

/// One logged environment transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: Vec<f64>,
    pub rc: Components,
    pub next_state: EnvState,
    /// True termination; time-limit truncation is not terminal.
    pub done: bool,
}

/// Rolls a stochastic behavior policy, resetting on episode end, until `n` transitions
/// are logged.
pub fn behavior_dataset<R: Rng>(
    config: &EnvConfig,
    behavior: &LinearGaussianPolicy,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Empty("dataset size"));
    }
    let mut out = Vec::with_capacity(n);
    let mut state = rollout::random_start(config, rng);
    while out.len() < n {
        let action = behavior.distribution(&state.observation())?.sample(rng);
        let step = env_step(config, &state, &action)?;
        out.push(Transition {
            state: state.clone(),
            action,
            rc: step.rc,
            next_state: step.next.clone(),
            done: step.terminal,
        });
        state = if step.done {
            rollout::random_start(config, rng)
        } else {
            step.next
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_action_at_rest() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest(2);
        let out = env_step(&cfg, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(out.rc, [0.0, 0.0, 1.0]);
        assert_eq!(out.next.pos, s.pos);
        assert_eq!(out.next.vel, s.vel);
        assert!(!out.done);
    }

    #[test]
    fn leaving_workspace_terminates_but_counts_the_step() {
        // lateral pos 1.99 with lateral speed 1: one step of dt = 0.05 moves past 2.0
        let cfg = EnvConfig::default();
        let s = EnvState {
            pos: vec![0.0, 1.99],
            vel: vec![0.0, 1.0],
            t: 0,
        };
        let out = env_step(&cfg, &s, &[0.0, 0.0]).unwrap();
        assert!((out.next.vel[1] - 0.95).abs() < 1e-15);
        assert!((out.next.pos[1] - 2.0375).abs() < 1e-12);
        assert!(out.done && out.terminal);
        assert_eq!(out.rc[2], 1.0);
    }

    #[test]
    fn step_budget_truncates() {
        let cfg = EnvConfig {
            max_steps: 3,
            ..EnvConfig::default()
        };
        let mut s = EnvState::at_rest(2);
        for k in 0..3 {
            let out = env_step(&cfg, &s, &[0.0, 0.0]).unwrap();
            assert_eq!(out.done, k == 2);
            assert!(!out.terminal);
            s = out.next;
        }
    }

    #[test]
    fn constant_thrust_without_drag_is_arithmetic() {
        // v_t = t·dt, so the forward components sum to dt·k(k+1)/2
        let cfg = EnvConfig {
            drag: 0.0,
            action_dim: 1,
            ..EnvConfig::default()
        };
        let mut s = EnvState::at_rest(1);
        let mut forward = 0.0;
        let k = 40;
        for _ in 0..k {
            let out = env_step(&cfg, &s, &[1.0]).unwrap();
            forward += out.rc[0];
            assert_eq!(out.rc[1], -1.0);
            s = out.next;
        }
        let expect = cfg.dt * (k * (k + 1)) as f64 / 2.0;
        assert!((forward - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = EnvConfig::default();
        let s = EnvState::at_rest(2);
        assert!(env_step(&cfg, &s, &[0.0]).is_err());
        assert!(env_step(&cfg, &s, &[f64::NAN, 0.0]).is_err());
        assert!(EnvConfig {
            dt: 0.0,
            ..EnvConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn dataset_is_deterministic_and_bounded() {
        let cfg = EnvConfig::default();
        let actor = actor_policy(&cfg);
        let a = behavior_dataset(&cfg, &actor, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = behavior_dataset(&cfg, &actor, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(behavior_dataset(&cfg, &actor, 0, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
        for tr in &a {
            assert!(tr.rc.iter().all(|c| c.is_finite()));
            assert_eq!(tr.rc[2], 1.0);
            assert!(tr.rc[1] <= 0.0);
            if tr.done {
                assert!(tr.next_state.pos[1].abs() > cfg.workspace_halfwidth);
            }
        }
    }
}
