//! Linear fitted-Q evaluation over goal-factored quadratic features.
//!
//! Rewards are linear in the goal, so `Q_g(s,a) = Σ_c g_c ψ_c(s,a)` exactly; the feature
//! map `φ(s,a,g) = g ⊗ poly2(obs, a)` keeps that structure and gives an analytic
//! action gradient.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use super::{LinearGaussianPolicy, Transition};
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::goal::{Goal, N_COMPONENTS};

/// `g ⊗ [1, z, z_i z_j (i ≤ j)]` with `z = (obs, action)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
}

impl FeatureSpec {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self { obs_dim, action_dim }
    }

    pub fn id(&self) -> String {
        format!("goal_x_poly2(obs={},act={})", self.obs_dim, self.action_dim)
    }

    fn z_dim(&self) -> usize {
        self.obs_dim + self.action_dim
    }

    /// Length of the goal-free quadratic block.
    pub fn poly_dim(&self) -> usize {
        let n = self.z_dim();
        1 + n + n * (n + 1) / 2
    }

    pub fn dim(&self) -> usize {
        N_COMPONENTS * self.poly_dim()
    }

    fn poly(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = obs.iter().chain(action).copied().collect();
        let mut out = Vec::with_capacity(self.poly_dim());
        out.push(1.0);
        out.extend_from_slice(&z);
        for i in 0..z.len() {
            for j in i..z.len() {
                out.push(z[i] * z[j]);
            }
        }
        out
    }

    /// `∂ poly / ∂ action_k`, one row per action dimension.
    fn poly_action_jacobian(&self, obs: &[f64], action: &[f64]) -> Vec<Vec<f64>> {
        let z: Vec<f64> = obs.iter().chain(action).copied().collect();
        let n = z.len();
        (0..self.action_dim)
            .map(|k| {
                let m = self.obs_dim + k;
                let mut row = vec![0.0; self.poly_dim()];
                row[1 + m] = 1.0;
                let mut idx = 1 + n;
                for i in 0..n {
                    for j in i..n {
                        if i == m {
                            row[idx] += z[j];
                        }
                        if j == m {
                            row[idx] += z[i];
                        }
                        idx += 1;
                    }
                }
                row
            })
            .collect()
    }

    pub fn features(&self, obs: &[f64], action: &[f64], goal: &Goal) -> Vec<f64> {
        let p = self.poly(obs, action);
        goal.weights()
            .iter()
            .flat_map(|g| p.iter().map(move |x| g * x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCritic {
    spec: FeatureSpec,
    weights: Vec<f64>,
}

impl LinearCritic {
    pub fn new(spec: FeatureSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: weights.len(),
            });
        }
        Ok(Self { spec, weights })
    }

    pub fn zero(spec: FeatureSpec) -> Self {
        Self {
            spec,
            weights: vec![0.0; spec.dim()],
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check(&self, obs: &[f64], action: &[f64]) -> Result<()> {
        if obs.len() != self.spec.obs_dim || action.len() != self.spec.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.z_dim(),
                found: obs.len() + action.len(),
            });
        }
        Ok(())
    }

    pub fn q(&self, obs: &[f64], action: &[f64], goal: &Goal) -> Result<f64> {
        self.check(obs, action)?;
        let p = self.spec.poly(obs, action);
        Ok(self.goal_weights(goal).iter().zip(&p).map(|(w, x)| w * x).sum())
    }

    /// Analytic `∂Q/∂a` at `action`.
    pub fn action_gradient(&self, obs: &[f64], action: &[f64], goal: &Goal) -> Result<Vec<f64>> {
        self.check(obs, action)?;
        let w = self.goal_weights(goal);
        Ok(self
            .spec
            .poly_action_jacobian(obs, action)
            .iter()
            .map(|row| row.iter().zip(&w).map(|(d, w)| d * w).sum())
            .collect())
    }

    /// Collapses the goal blocks: `Σ_c g_c w_c`.
    fn goal_weights(&self, goal: &Goal) -> Vec<f64> {
        let np = self.spec.poly_dim();
        let mut out = vec![0.0; np];
        for (c, g) in goal.weights().iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights[c * np..(c + 1) * np]) {
                *o += g * w;
            }
        }
        out
    }
}

/// How FQE picks the goal for each batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSampler {
    /// 50% flat simplex, 30% vertex-concentrated simplex (Dirichlet 0.3), 20% uniform
    /// over the listed evaluation goals.
    Mixture(Vec<Goal>),
    Fixed(Goal),
}

impl GoalSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Goal {
        match self {
            GoalSampler::Fixed(g) => *g,
            GoalSampler::Mixture(named) => {
                let u: f64 = rng.random();
                let conc = if u < 0.5 {
                    1.0
                } else if u < 0.8 || named.is_empty() {
                    0.3
                } else {
                    return named[rng.random_range(0..named.len())];
                };
                let w = Dirichlet::new([conc; N_COMPONENTS])
                    .expect("positive concentration")
                    .sample(rng);
                Goal::new(w).expect("simplex point is finite")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FqeConfig {
    pub epochs: usize,
    pub gamma: f64,
    pub polyak_tau: f64,
    pub batch_size: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            gamma: 0.9,
            polyak_tau: 5e-3,
            batch_size: 256,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqeReport {
    /// Mean squared self-consistent TD residual per epoch, averaged over the evaluation goals.
    pub td_residuals: Vec<f64>,
}

struct Batch {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    reward: DMatrix<f64>,
}

/// Fitted-Q evaluation of the actor's mean action with a Polyak-averaged target.
///
/// Each epoch draws one goal per batch, solves the ridge-regularized least-squares
/// regression onto `r_g + γ(1-d) Q_target(s', μ_actor(s'), g)` over all batches, and
/// moves the target toward the solution by `τ` once per batch.
pub fn fqe_train(
    dataset: &[Transition],
    actor: &LinearGaussianPolicy,
    sampler: &GoalSampler,
    eval_goals: &[Goal],
    config: &FqeConfig,
) -> Result<(LinearCritic, FqeReport)> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if !(config.gamma > 0.0 && config.gamma < 1.0) {
        return Err(Error::param("gamma", config.gamma, "must lie in (0, 1)"));
    }
    if !(config.polyak_tau > 0.0 && config.polyak_tau <= 1.0) {
        return Err(Error::param("polyak_tau", config.polyak_tau, "must lie in (0, 1]"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let spec = FeatureSpec::new(actor.obs_dim(), actor.action_dim());
    let np = spec.poly_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut polys = Vec::with_capacity(dataset.len());
    let mut next_polys = Vec::with_capacity(dataset.len());
    for tr in dataset {
        let obs = tr.state.observation();
        polys.push(DVector::from_vec(spec.poly(&obs, &tr.action)));
        let next_obs = tr.next_state.observation();
        let next_action = actor.mean(&next_obs)?;
        let cont = if tr.done { 0.0 } else { 1.0 };
        next_polys.push(DVector::from_vec(spec.poly(&next_obs, &next_action)) * cont);
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let batches: Vec<Batch> = order
        .chunks(config.batch_size)
        .map(|idx| {
            let mut gram = DMatrix::zeros(np, np);
            let mut cross = DMatrix::zeros(np, np);
            let mut reward = DMatrix::zeros(np, N_COMPONENTS);
            for &i in idx {
                let p = &polys[i];
                gram.ger(1.0, p, p, 1.0);
                cross.ger(1.0, p, &next_polys[i], 1.0);
                let rc = DVector::from_column_slice(&dataset[i].rc);
                reward.ger(1.0, p, &rc, 1.0);
            }
            Batch { gram, cross, reward }
        })
        .collect();

    let dim = spec.dim();
    let mut target = DMatrix::<f64>::zeros(np, N_COMPONENTS);
    let mut main = target.clone();
    let mut td_residuals = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let goals: Vec<Goal> = batches.iter().map(|_| sampler.sample(&mut rng)).collect();
        let mut a = DMatrix::<f64>::identity(dim, dim) * config.ridge;
        let mut rhs = DVector::<f64>::zeros(dim);
        for (batch, goal) in batches.iter().zip(&goals) {
            let g = DVector::from_column_slice(goal.weights());
            for c in 0..N_COMPONENTS {
                for c2 in 0..N_COMPONENTS {
                    let w = g[c] * g[c2];
                    if w != 0.0 {
                        let mut block = a.view_mut((c * np, c2 * np), (np, np));
                        block += &batch.gram * w;
                    }
                }
            }
            let v = &batch.reward * &g + &batch.cross * (&target * &g) * config.gamma;
            for c in 0..N_COMPONENTS {
                let mut block = rhs.rows_mut(c * np, np);
                block += &v * g[c];
            }
        }
        let solution = match a.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => a.lu().solve(&rhs).ok_or(Error::Singular)?,
        };
        main = DMatrix::from_column_slice(np, N_COMPONENTS, solution.as_slice());
        for _ in 0..batches.len() {
            target = &target * (1.0 - config.polyak_tau) + &main * config.polyak_tau;
        }
        td_residuals.push(td_residual(dataset, &polys, &next_polys, &main, eval_goals, config.gamma));
    }
    let critic = LinearCritic::new(spec, main.as_slice().to_vec())?;
    Ok((critic, FqeReport { td_residuals }))
}

fn td_residual(
    dataset: &[Transition],
    polys: &[DVector<f64>],
    next_polys: &[DVector<f64>],
    w: &DMatrix<f64>,
    goals: &[Goal],
    gamma: f64,
) -> f64 {
    if goals.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let q = w.tr_mul(&polys[i]);
        let q_next = w.tr_mul(&next_polys[i]);
        for goal in goals {
            let g = goal.weights();
            let mut err = -goal.reward(&dataset[i].rc);
            for c in 0..N_COMPONENTS {
                err += g[c] * (q[c] - gamma * q_next[c]);
            }
            total += err * err;
        }
    }
    total / (dataset.len() * goals.len()) as f64
}

/// First-order advantage-weighted mean shift: `μ + clamp(σ²/β · ∂Q/∂a, ±clip)`.
pub fn awr_step(
    actor_at_state: &DiagGaussian,
    critic: &LinearCritic,
    obs: &[f64],
    goal: &Goal,
    beta: f64,
    clip: f64,
) -> Result<Vec<f64>> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::param("beta", beta, "must be positive"));
    }
    if clip.is_nan() || clip <= 0.0 {
        return Err(Error::param("clip", clip, "must be positive"));
    }
    let mean = actor_at_state.mean();
    let grad = critic.action_gradient(obs, mean, goal)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("critic action gradient"));
    }
    Ok(mean
        .iter()
        .zip(actor_at_state.var())
        .zip(&grad)
        .map(|((m, v), g)| m + (v / beta * g).clamp(-clip, clip))
        .collect())
}
