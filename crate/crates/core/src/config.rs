//! Run configuration: one TOML file whose defaults encode the standard fixture.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, FqeConfig, KlConvention, MethodSpec, PriorKind};
use crate::error::{Error, Result};
use crate::gaussian::alpha_to_beta;
use crate::goal::Goal;

/// Tolerance for matching a configured β to `α / (1 - α)`; covers three-decimal labels.
pub const BETA_MATCH_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedGoal {
    pub id: String,
    pub weights: Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            resamples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    /// Transitions in the offline dataset, logged by the stochastic actor.
    pub dataset_size: usize,
    pub dataset_seed: u64,
    pub fqe: FqeConfig,
    /// Lower-tail percentiles of dataset-action Q for the two risk rates.
    pub risk_percentiles: (f64, f64),
    /// Dataset states scored by the risk rates (a prefix of the dataset).
    pub risk_states: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            dataset_size: 20_000,
            dataset_seed: 0,
            fqe: FqeConfig::default(),
            risk_percentiles: (10.0, 5.0),
            risk_states: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub n_states: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            n_states: 5_000,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub seeds: Vec<u64>,
    pub episodes_per_seed: usize,
    pub noise_sigma: f64,
    pub variants: Vec<String>,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            episodes_per_seed: 3,
            noise_sigma: 0.05,
            variants: ["trained", "undertrained", "noisy", "random"].map(String::from).to_vec(),
        }
    }
}

impl DegradationConfig {
    pub fn prior_kinds(&self) -> Result<Vec<PriorKind>> {
        self.variants
            .iter()
            .map(|v| {
                Ok(match v.parse::<PriorKind>()? {
                    PriorKind::Noisy(_) if v == "noisy" => PriorKind::Noisy(self.noise_sigma),
                    k => k,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpiConfig {
    pub gammas: Vec<f64>,
    pub instances: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub alphas: Vec<f64>,
    /// Action samples per state for the Monte Carlo TV column.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for CpiConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.9, 0.99],
            instances: 20,
            n_states: 6,
            n_actions: 3,
            alphas: vec![0.1, 0.5, 0.9],
            mc_samples: 65536,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaStudyConfig {
    pub alpha_grid: Vec<f64>,
    pub validation_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    pub episodes_per_seed: usize,
    /// KL budgets, in the units of the mean per-step KL from the actor.
    pub kappas: Vec<f64>,
}

impl Default for AlphaStudyConfig {
    fn default() -> Self {
        Self {
            alpha_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9],
            validation_seeds: vec![0, 1, 2],
            test_seeds: vec![3, 4],
            episodes_per_seed: 5,
            kappas: vec![0.1, 0.3, 1.0, 3.0, 10.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env_id: String,
    pub env: EnvConfig,
    pub goals: Vec<NamedGoal>,
    pub alpha_grid: Vec<f64>,
    /// KL-regularization strengths paired index-wise with `alpha_grid`.
    pub beta_grid: Vec<f64>,
    pub additive_lambda: f64,
    pub awr_betas: Vec<f64>,
    pub awr_clip: f64,
    pub seeds: Vec<u64>,
    pub episodes_per_seed: usize,
    pub kl_convention: KlConvention,
    pub bootstrap: BootstrapConfig,
    pub critic: CriticConfig,
    pub audit: AuditConfig,
    pub degradation: DegradationConfig,
    pub cpi: CpiConfig,
    pub alpha_study: AlphaStudyConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env_id: "pointmass".into(),
            env: EnvConfig::default(),
            goals: vec![
                NamedGoal {
                    id: "G1".into(),
                    weights: Goal::speed(),
                },
                NamedGoal {
                    id: "G2".into(),
                    weights: Goal::balanced(),
                },
                NamedGoal {
                    id: "G3".into(),
                    weights: Goal::efficient(),
                },
            ],
            alpha_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            beta_grid: vec![0.111, 0.429, 1.0, 2.333, 9.0],
            additive_lambda: 0.5,
            awr_betas: vec![0.5, 1.0, 3.0],
            awr_clip: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            episodes_per_seed: 5,
            kl_convention: KlConvention::Poe,
            bootstrap: BootstrapConfig::default(),
            critic: CriticConfig::default(),
            audit: AuditConfig::default(),
            degradation: DegradationConfig::default(),
            cpi: CpiConfig::default(),
            alpha_study: AlphaStudyConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn check_alphas(name: &str, alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config(format!("{name} is empty")));
    }
    for a in alphas {
        if !(*a > 0.0 && *a < 1.0) {
            return Err(Error::Config(format!("{name} entry {a} must lie in (0, 1)")));
        }
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

fn check_seeds(name: &str, seeds: &[u64], episodes: usize) -> Result<()> {
    if seeds.is_empty() || episodes == 0 {
        return Err(Error::Config(format!("{name} needs at least one seed and one episode")));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("{name} has repeated seeds")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.env_id.is_empty() {
            return Err(Error::Config("env_id is empty".into()));
        }
        if self.goals.is_empty() {
            return Err(Error::Config("goal set is empty".into()));
        }
        let mut ids: Vec<&str> = self.goals.iter().map(|g| g.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) || ids.iter().any(|id| id.is_empty()) {
            return Err(Error::Config("goal ids must be distinct and nonempty".into()));
        }
        check_alphas("alpha_grid", &self.alpha_grid)?;
        if self.beta_grid.len() != self.alpha_grid.len() {
            return Err(Error::Config(format!(
                "beta_grid has {} entries, alpha_grid has {}",
                self.beta_grid.len(),
                self.alpha_grid.len()
            )));
        }
        for (a, b) in self.alpha_grid.iter().zip(&self.beta_grid) {
            let exact = alpha_to_beta(*a)?;
            if (exact - b).abs() > BETA_MATCH_TOL {
                return Err(Error::Config(format!(
                    "beta {b} does not match alpha {a} (expected {exact:.6})"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.additive_lambda) {
            return Err(Error::Config("additive_lambda must lie in [0, 1]".into()));
        }
        if self.awr_betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("awr_betas must be positive".into()));
        }
        if !(self.awr_clip > 0.0 && self.awr_clip.is_finite()) {
            return Err(Error::Config("awr_clip must be positive".into()));
        }
        check_seeds("seeds", &self.seeds, self.episodes_per_seed)?;
        let b = &self.bootstrap;
        if !(b.level > 0.0 && b.level < 1.0) || b.resamples < 100 {
            return Err(Error::Config("bootstrap needs level in (0, 1) and at least 100 resamples".into()));
        }
        let c = &self.critic;
        if c.dataset_size == 0 || c.risk_states == 0 {
            return Err(Error::Config("critic dataset_size and risk_states must be positive".into()));
        }
        let (cat, con) = c.risk_percentiles;
        if !(0.0 <= con && con <= cat && cat <= 100.0) {
            return Err(Error::Config("risk_percentiles need 0 ≤ second ≤ first ≤ 100".into()));
        }
        if self.audit.n_states == 0 || self.audit.tolerance.is_nan() || self.audit.tolerance <= 0.0 {
            return Err(Error::Config("audit needs n_states > 0 and a positive tolerance".into()));
        }
        let d = &self.degradation;
        check_seeds("degradation.seeds", &d.seeds, d.episodes_per_seed)?;
        if !(d.noise_sigma > 0.0 && d.noise_sigma.is_finite()) {
            return Err(Error::Config("degradation.noise_sigma must be positive".into()));
        }
        if d.variants.is_empty() {
            return Err(Error::Config("degradation.variants is empty".into()));
        }
        d.prior_kinds()?;
        let p = &self.cpi;
        if p.gammas.is_empty() || p.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::Config("cpi.gammas must lie in (0, 1)".into()));
        }
        if p.instances == 0 || p.n_states == 0 || p.n_actions < 2 || p.mc_samples == 0 {
            return Err(Error::Config("cpi needs instances, states, ≥ 2 actions and samples".into()));
        }
        check_alphas("cpi.alphas", &p.alphas)?;
        let s = &self.alpha_study;
        check_alphas("alpha_study.alpha_grid", &s.alpha_grid)?;
        check_seeds("alpha_study.validation_seeds", &s.validation_seeds, s.episodes_per_seed)?;
        check_seeds("alpha_study.test_seeds", &s.test_seeds, s.episodes_per_seed)?;
        if s.validation_seeds.iter().any(|v| s.test_seeds.contains(v)) {
            return Err(Error::Config("validation and test seeds overlap".into()));
        }
        if s.kappas.is_empty() || s.kappas.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config("alpha_study.kappas must be positive".into()));
        }
        if s.kappas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("alpha_study.kappas must be strictly increasing".into()));
        }
        Ok(())
    }

    /// The main-package methods in output order. KL-regularized strengths are the exact
    /// `α / (1 - α)` of each grid α; `beta_grid` only labels and validates them.
    pub fn main_methods(&self) -> Vec<MethodSpec> {
        let mut out = vec![
            MethodSpec::Frozen,
            MethodSpec::PriorOnly,
            MethodSpec::Additive {
                lambda: self.additive_lambda,
            },
        ];
        out.extend(self.alpha_grid.iter().map(|&alpha| MethodSpec::Poe { alpha }));
        out.extend(self.alpha_grid.iter().map(|&alpha| MethodSpec::KlReg {
            beta: alpha / (1.0 - alpha),
        }));
        out
    }

    /// Shifts every seed (rollout, degradation, α-study split, dataset, bootstrap, audit
    /// and tabular instances) by `offset`.
    pub fn offset_seeds(&mut self, offset: u64) {
        let shift = |v: &mut Vec<u64>| v.iter_mut().for_each(|s| *s = s.wrapping_add(offset));
        shift(&mut self.seeds);
        shift(&mut self.degradation.seeds);
        shift(&mut self.alpha_study.validation_seeds);
        shift(&mut self.alpha_study.test_seeds);
        for s in [
            &mut self.critic.dataset_seed,
            &mut self.critic.fqe.seed,
            &mut self.bootstrap.seed,
            &mut self.audit.seed,
            &mut self.cpi.seed,
        ] {
            *s = s.wrapping_add(offset);
        }
    }

    pub fn awr_methods(&self) -> Vec<MethodSpec> {
        self.awr_betas
            .iter()
            .map(|&beta| MethodSpec::Awr {
                beta,
                clip: self.awr_clip,
            })
            .collect()
    }

    pub fn goal_list(&self) -> Vec<Goal> {
        self.goals.iter().map(|g| g.weights).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.main_methods().len(), 13);
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn beta_grid_must_match() {
        let err = RunConfig::from_toml_str("beta_grid = [0.2, 0.429, 1.0, 2.333, 9.0]");
        assert!(matches!(err, Err(Error::Config(_))));
        let ok = RunConfig::from_toml_str("beta_grid = [0.1111, 0.4286, 1.0, 2.3333, 9.0]");
        assert!(ok.is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml_str("colour = 1").is_err());
        assert!(RunConfig::from_toml_str("seeds = []").is_err());
        assert!(RunConfig::from_toml_str("[degradation]\nvariants = [\"bogus\"]").is_err());
        assert!(RunConfig::from_toml_str("[alpha_study]\ntest_seeds = [0]").is_err());
        assert!(RunConfig::from_toml_str("alpha_grid = [0.5, 0.3]\nbeta_grid = [1.0, 0.429]").is_err());
    }

    #[test]
    fn goals_parse_from_toml() {
        let c = RunConfig::from_toml_str("[[goals]]\nid = \"fast\"\nweights = [1.0, 0.0, 0.0]").unwrap();
        assert_eq!(c.goals.len(), 1);
        assert_eq!(c.goals[0].weights.weights(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn noisy_variant_takes_configured_sigma() {
        let c = RunConfig::from_toml_str("[degradation]\nnoise_sigma = 0.2").unwrap();
        assert!(c.degradation.prior_kinds().unwrap().contains(&PriorKind::Noisy(0.2)));
    }
}
