//! Exact tabular MDP evaluation and the improvement / shift inequalities built on it.
//!
//! Everything here uses direct linear solves so the identity checks are exact up to
//! floating point, not up to an iteration tolerance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::finite::{poe_finite, tv_distance, FinitePolicy};
use crate::goal::{Components, Goal};

const ROW_TOL: f64 = 1e-10;

/// Finite MDP with three-component rewards.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `P[s][a][s']`.
    transition: Vec<f64>,
    /// Flattened `rc[s][a]`.
    components: Vec<Components>,
    gamma: f64,
    initial: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        components: Vec<Components>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Empty("state or action set"));
        }
        let expect = n_states * n_actions * n_states;
        if transition.len() != expect {
            return Err(Error::DimensionMismatch {
                expected: expect,
                found: transition.len(),
            });
        }
        if components.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                found: components.len(),
            });
        }
        if initial.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                found: initial.len(),
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::param("gamma", gamma, "must lie in (0, 1)"));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|e| {
                Error::NotProbability(format!("P[{}][{}]: {e}", i / n_actions, i % n_actions))
            })?;
        }
        if components.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("reward components"));
        }
        check_distribution(&initial).map_err(|e| Error::NotProbability(format!("initial: {e}")))?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            components,
            gamma,
            initial,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn components(&self, s: usize, a: usize) -> &Components {
        &self.components[s * self.n_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize, goal: &Goal) -> f64 {
        goal.reward(self.components(s, a))
    }

    /// Same MDP with a different transition kernel.
    pub fn with_transition(&self, transition: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            transition,
            self.components.clone(),
            self.gamma,
            self.initial.clone(),
        )
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.components.clone(),
            gamma,
            self.initial.clone(),
        )
    }

    /// `max_{s,a} |r_g(s,a)|`.
    pub fn reward_bound(&self, goal: &Goal) -> f64 {
        self.components.iter().map(|rc| goal.reward(rc).abs()).fold(0.0, f64::max)
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::StructuralMismatch(format!(
                "policy is {}x{}, mdp is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// State-to-state kernel under `policy`.
    fn policy_kernel(&self, policy: &TabularPolicy) -> DMatrix<f64> {
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for (a, &pa) in policy.row(s).probs().iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (t, &pt) in self.next_dist(s, a).iter().enumerate() {
                    p[(s, t)] += pa * pt;
                }
            }
        }
        p
    }

    fn policy_reward(&self, policy: &TabularPolicy, goal: &Goal) -> DVector<f64> {
        DVector::from_iterator(
            self.n_states,
            (0..self.n_states).map(|s| {
                policy
                    .row(s)
                    .probs()
                    .iter()
                    .enumerate()
                    .map(|(a, pa)| pa * self.reward(s, a, goal))
                    .sum::<f64>()
            }),
        )
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("negative or non-finite entry".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Stationary policy: one action distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    rows: Vec<FinitePolicy>,
}

impl TabularPolicy {
    pub fn new(rows: Vec<FinitePolicy>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty("policy rows"));
        };
        let n_actions = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n_actions) {
            return Err(Error::DimensionMismatch {
                expected: n_actions,
                found: bad.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(FinitePolicy::new).collect::<Result<_>>()?)
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let rows = actions
            .iter()
            .map(|&a| {
                if a >= n_actions {
                    return Err(Error::DimensionMismatch {
                        expected: n_actions,
                        found: a + 1,
                    });
                }
                let mut p = vec![0.0; n_actions];
                p[a] = 1.0;
                FinitePolicy::new(p)
            })
            .collect::<Result<_>>()?;
        Self::new(rows)
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, s: usize) -> &FinitePolicy {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[FinitePolicy] {
        &self.rows
    }

    /// Per-state finite PoE refinement of `actor` toward `prior`.
    pub fn poe(actor: &Self, prior: &Self, alpha: f64) -> Result<Self> {
        if actor.n_states() != prior.n_states() {
            return Err(Error::DimensionMismatch {
                expected: actor.n_states(),
                found: prior.n_states(),
            });
        }
        Self::new(
            actor
                .rows
                .iter()
                .zip(&prior.rows)
                .map(|(a, p)| poe_finite(a, p, alpha))
                .collect::<Result<_>>()?,
        )
    }

    /// `max_s TV(self[s], other[s])`.
    pub fn max_tv(&self, other: &Self) -> Result<f64> {
        if self.n_states() != other.n_states() {
            return Err(Error::DimensionMismatch {
                expected: self.n_states(),
                found: other.n_states(),
            });
        }
        self.rows
            .iter()
            .zip(&other.rows)
            .try_fold(0.0f64, |m, (p, q)| Ok(m.max(tv_distance(p, q)?)))
    }
}

/// State values, action values, and advantages of one policy under one goal.
#[derive(Debug, Clone)]
pub struct ValueBundle {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub advantage: Vec<Vec<f64>>,
    /// `‖V - (r_pi + γ P_pi V)‖_∞` of the solve.
    pub bellman_residual: f64,
}

pub fn solve_values(mdp: &TabularMdp, policy: &TabularPolicy, goal: &Goal) -> Result<ValueBundle> {
    mdp.check_policy(policy)?;
    let n = mdp.n_states;
    let p = mdp.policy_kernel(policy);
    let r = mdp.policy_reward(policy, goal);
    let system = DMatrix::identity(n, n) - &p * mdp.gamma;
    let v = system.lu().solve(&r).ok_or(Error::Singular)?;
    let bellman_residual = (&r + &p * &v * mdp.gamma - &v).amax();

    let mut q = vec![vec![0.0; mdp.n_actions]; n];
    let mut advantage = vec![vec![0.0; mdp.n_actions]; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let next: f64 = mdp.next_dist(s, a).iter().zip(v.iter()).map(|(pt, vt)| pt * vt).sum();
            q[s][a] = mdp.reward(s, a, goal) + mdp.gamma * next;
            advantage[s][a] = q[s][a] - v[s];
        }
    }
    Ok(ValueBundle {
        v: v.iter().copied().collect(),
        q,
        advantage,
        bellman_residual,
    })
}

/// Normalized discounted state occupancy `d(s) = (1-γ) Σ_t γ^t Pr(s_t = s)`.
pub fn discounted_occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let n = mdp.n_states;
    let p = mdp.policy_kernel(policy);
    let system = DMatrix::identity(n, n) - p.transpose() * mdp.gamma;
    let rhs = DVector::from_column_slice(&mdp.initial) * (1.0 - mdp.gamma);
    let d = system.lu().solve(&rhs).ok_or(Error::Singular)?;
    // clip round-off negatives; true occupancies are non-negative
    Ok(d.iter().map(|x| x.max(0.0)).collect())
}

/// `J = Σ_s μ(s) V(s)`.
pub fn exact_return(mdp: &TabularMdp, policy: &TabularPolicy, goal: &Goal) -> Result<f64> {
    let values = solve_values(mdp, policy, goal)?;
    Ok(mdp.initial.iter().zip(&values.v).map(|(m, v)| m * v).sum())
}

/// `J` computed through the occupancy: `(1/(1-γ)) Σ_s d(s) r_pi(s)`.
pub fn occupancy_return(mdp: &TabularMdp, policy: &TabularPolicy, goal: &Goal) -> Result<f64> {
    let d = discounted_occupancy(mdp, policy)?;
    let r = mdp.policy_reward(policy, goal);
    Ok(d.iter().zip(r.iter()).map(|(d, r)| d * r).sum::<f64>() / (1.0 - mdp.gamma))
}

/// Expected advantage of `base` when acting with `candidate`, per state.
fn policy_advantage(candidate: &TabularPolicy, base_values: &ValueBundle) -> Vec<f64> {
    candidate
        .rows
        .iter()
        .zip(&base_values.advantage)
        .map(|(row, adv)| row.probs().iter().zip(adv).map(|(p, a)| p * a).sum())
        .collect()
}

/// Both sides of the performance-difference identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdlCheck {
    /// `J(pi') - J(pi)`.
    pub lhs: f64,
    /// `(1/(1-γ)) E_{s~d^{pi'}} E_{a~pi'} A^pi(s,a)`.
    pub rhs: f64,
    pub residual: f64,
}

pub fn pdl_check(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_prime: &TabularPolicy,
    goal: &Goal,
) -> Result<PdlCheck> {
    let base = solve_values(mdp, pi, goal)?;
    let lhs = exact_return(mdp, pi_prime, goal)? - exact_return(mdp, pi, goal)?;
    let d_prime = discounted_occupancy(mdp, pi_prime)?;
    let adv = policy_advantage(pi_prime, &base);
    let rhs = d_prime.iter().zip(&adv).map(|(d, a)| d * a).sum::<f64>() / (1.0 - mdp.gamma);
    Ok(PdlCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// A measured quantity and the upper bound it must respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    /// `lhs ≤ rhs` up to `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Occupancy gap between two policies against `(2γ/(1-γ)) max_s TV`.
pub fn occupancy_bound_check(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pi_prime: &TabularPolicy,
) -> Result<BoundCheck> {
    let d = discounted_occupancy(mdp, pi)?;
    let d_prime = discounted_occupancy(mdp, pi_prime)?;
    let delta = pi_prime.max_tv(pi)?;
    Ok(BoundCheck {
        lhs: l1_gap(&d, &d_prime),
        rhs: 2.0 * mdp.gamma / (1.0 - mdp.gamma) * delta,
    })
}

/// `max_{s,a} TV(P_train(·|s,a), P_deploy(·|s,a))`.
pub fn kernel_shift(train: &TabularMdp, deploy: &TabularMdp) -> Result<f64> {
    check_same_structure(train, deploy)?;
    Ok(train
        .transition
        .chunks(train.n_states)
        .zip(deploy.transition.chunks(deploy.n_states))
        .map(|(p, q)| 0.5 * l1_gap(p, q))
        .fold(0.0, f64::max))
}

fn check_same_structure(train: &TabularMdp, deploy: &TabularMdp) -> Result<()> {
    if train.n_states != deploy.n_states || train.n_actions != deploy.n_actions {
        return Err(Error::StructuralMismatch("state or action counts differ".into()));
    }
    if train.gamma != deploy.gamma {
        return Err(Error::StructuralMismatch("discounts differ".into()));
    }
    if train.components != deploy.components {
        return Err(Error::StructuralMismatch("reward components differ".into()));
    }
    if train.initial != deploy.initial {
        return Err(Error::StructuralMismatch("initial distributions differ".into()));
    }
    Ok(())
}

/// Effect of a transition-kernel shift on one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelShiftCheck {
    pub eps_p: f64,
    pub occ_gap: f64,
    pub occ_bound: f64,
    pub return_gap: f64,
    pub return_bound: f64,
}

impl KernelShiftCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.occ_gap <= self.occ_bound + tol && self.return_gap <= self.return_bound + tol
    }
}

pub fn kernel_shift_bound_check(
    train: &TabularMdp,
    deploy: &TabularMdp,
    policy: &TabularPolicy,
    goal: &Goal,
) -> Result<KernelShiftCheck> {
    let eps_p = kernel_shift(train, deploy)?;
    let gamma = train.gamma;
    let d_train = discounted_occupancy(train, policy)?;
    let d_deploy = discounted_occupancy(deploy, policy)?;
    let j_train = exact_return(train, policy, goal)?;
    let j_deploy = exact_return(deploy, policy, goal)?;
    let r_max = train.reward_bound(goal);
    Ok(KernelShiftCheck {
        eps_p,
        occ_gap: l1_gap(&d_train, &d_deploy),
        occ_bound: 2.0 * gamma * eps_p / (1.0 - gamma),
        return_gap: (j_train - j_deploy).abs(),
        return_bound: 2.0 * gamma * r_max * eps_p / (1.0 - gamma).powi(2),
    })
}

/// `2γ / (1-γ)^2`, the coefficient on `ε_A · δ` in the conservative-improvement bound.
///
/// `γ` is read as its shortest decimal form `m / 10^k` and the coefficient
/// `2 m 10^k / (10^k - m)^2` is evaluated in integers, so `0.99` gives exactly 19800.
pub fn cpi_penalty_coeff(gamma: f64) -> f64 {
    decimal_penalty_coeff(gamma).unwrap_or_else(|| 2.0 * gamma / ((1.0 - gamma) * (1.0 - gamma)))
}

fn decimal_penalty_coeff(gamma: f64) -> Option<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return None;
    }
    let text = format!("{gamma}");
    let digits = match text.strip_prefix("0.") {
        Some(d) => d,
        None if text == "0" => "",
        None => return None,
    };
    if digits.len() > 18 {
        return None;
    }
    let m: u128 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let scale = 10u128.pow(digits.len() as u32);
    let gap = scale - m;
    let num = 2 * m * scale;
    let den = gap.checked_mul(gap)?;
    let g = gcd(num, den);
    Some((num / g) as f64 / (den / g) as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Conservative policy improvement bound evaluated exactly on a tabular instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpiDiagnostic {
    pub gamma: f64,
    /// `J(refined) - J(actor)`.
    pub lhs: f64,
    /// `E_{s~d^actor} Σ_a refined(a|s) A^actor(s,a)`.
    pub gain_term: f64,
    pub penalty_coeff: f64,
    /// `max_s |Σ_a refined(a|s) A^actor(s,a)|`.
    pub eps_a: f64,
    /// `max_s TV(refined(·|s), actor(·|s))`.
    pub delta_pi: f64,
    pub rhs: f64,
    /// Same bound with the advantage range replaced by the unit proxy `ε_A = 1`.
    pub rhs_unit_proxy: f64,
    /// The lower bound is strictly positive: `gain > (2γ/(1-γ)) ε_A δ`.
    pub guaranteed_improvement: bool,
}

impl CpiDiagnostic {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs >= self.rhs - tol
    }
}

pub fn cpi_diagnostic(
    mdp: &TabularMdp,
    actor: &TabularPolicy,
    refined: &TabularPolicy,
    goal: &Goal,
) -> Result<CpiDiagnostic> {
    let gamma = mdp.gamma;
    let base = solve_values(mdp, actor, goal)?;
    let d_actor = discounted_occupancy(mdp, actor)?;
    let per_state = policy_advantage(refined, &base);
    let gain_term: f64 = d_actor.iter().zip(&per_state).map(|(d, a)| d * a).sum();
    let eps_a = per_state.iter().map(|a| a.abs()).fold(0.0, f64::max);
    let delta_pi = refined.max_tv(actor)?;
    let penalty_coeff = cpi_penalty_coeff(gamma);
    let lhs = exact_return(mdp, refined, goal)? - exact_return(mdp, actor, goal)?;
    Ok(CpiDiagnostic {
        gamma,
        lhs,
        gain_term,
        penalty_coeff,
        eps_a,
        delta_pi,
        rhs: gain_term / (1.0 - gamma) - penalty_coeff * eps_a * delta_pi,
        rhs_unit_proxy: gain_term / (1.0 - gamma) - penalty_coeff * delta_pi,
        guaranteed_improvement: gain_term > 2.0 * gamma / (1.0 - gamma) * eps_a * delta_pi,
    })
}

/// Improvement guarantee transferred from the training kernel to a shifted deployment kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeployImprovementCheck {
    /// `J_deploy(refined) - J_deploy(actor)`.
    pub deploy_improvement: f64,
    /// Conservative-improvement RHS evaluated on the training kernel.
    pub train_rhs: f64,
    /// `4γ R_max ε_P / (1-γ)^2`.
    pub shift_penalty: f64,
}

impl DeployImprovementCheck {
    pub fn bound(&self) -> f64 {
        self.train_rhs - self.shift_penalty
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.deploy_improvement >= self.bound() - tol
    }
}

pub fn deploy_improvement_check(
    train: &TabularMdp,
    deploy: &TabularMdp,
    actor: &TabularPolicy,
    refined: &TabularPolicy,
    goal: &Goal,
) -> Result<DeployImprovementCheck> {
    let eps_p = kernel_shift(train, deploy)?;
    let gamma = train.gamma;
    let train_cpi = cpi_diagnostic(train, actor, refined, goal)?;
    let deploy_improvement = exact_return(deploy, refined, goal)? - exact_return(deploy, actor, goal)?;
    Ok(DeployImprovementCheck {
        deploy_improvement,
        train_rhs: train_cpi.rhs,
        shift_penalty: 4.0 * gamma * train.reward_bound(goal) * eps_p / (1.0 - gamma).powi(2),
    })
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // normalized exponentials are a flat Dirichlet draw
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let total: f64 = draws.iter().sum();
    let mut out: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // push the round-off into the largest entry so the row sums to 1 tightly
    let err = 1.0 - out.iter().sum::<f64>();
    let imax = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    out[imax] += err;
    out
}

/// Seeded random instance: flat-Dirichlet transition rows and initial distribution,
/// reward components uniform in `[-1, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(rng, n_states));
    }
    let components = (0..n_states * n_actions)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
        .collect();
    let initial = random_simplex(rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, components, gamma, initial)
}

/// Random stochastic policy with flat-Dirichlet rows.
pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
) -> Result<TabularPolicy> {
    TabularPolicy::from_rows((0..n_states).map(|_| random_simplex(rng, n_actions)).collect())
}

/// Mixes every transition row with a fresh random row: `(1-η) P + η Q`, so `ε_P ≤ η`.
pub fn perturb_kernel<R: Rng + ?Sized>(mdp: &TabularMdp, rng: &mut R, eta: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::param("eta", eta, "must lie in [0, 1]"));
    }
    let n = mdp.n_states;
    let mut transition = Vec::with_capacity(mdp.transition.len());
    for row in mdp.transition.chunks(n) {
        let noise = random_simplex(rng, n);
        transition.extend(row.iter().zip(&noise).map(|(p, q)| (1.0 - eta) * p + eta * q));
    }
    mdp.with_transition(transition)
}
