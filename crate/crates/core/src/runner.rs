//! Experiment commands. Each writes CSV files into the output directory and reports
//! which files it wrote and which checks failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alpha_select::{
    grid_point, kl_budget_select, oracle_select, selection_loss, val_best_select, AlphaGridResult,
};
use crate::config::RunConfig;
use crate::env::{
    actor_policy, behavior_dataset, fqe_train, make_prior, quantile_risk, rollout, ComposedPolicy, EpisodeRecord,
    FqeReport, GoalSampler, LinearCritic, LinearGaussianPolicy, MethodSpec, PriorKind, Transition,
};
use crate::error::{Error, Result};
use crate::finite::{finite_kl, FinitePolicy};
use crate::gaussian::{alpha_to_beta, equivalence_audit, pinsker_tv_bound};
use crate::mdp::{cpi_diagnostic, random_mdp, random_policy, TabularPolicy};
use crate::report::{Cell, Table};
use crate::row;
use crate::seeding::{derive_seed, label_key};
use crate::stats::{
    classify_cell, mean, paired_diff_ci, prob_improvement, CellSummary, Keyed, PairedDiff,
};

pub const AUDIT_FILE: &str = "audit_equivalence.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const PER_SEED_FILE: &str = "per_seed_summary.csv";
pub const CELL_FILE: &str = "cell_summary.csv";
pub const DIAGNOSTIC_FILE: &str = "diagnostic_summary.csv";
pub const MATCHED_FILE: &str = "matched_pairs.csv";
pub const AWR_EPISODES_FILE: &str = "awr_episodes.csv";
pub const AWR_COMPARISON_FILE: &str = "awr_comparison.csv";
pub const RISK_FILE: &str = "risk_summary.csv";
pub const FQE_FILE: &str = "fqe_training.csv";
pub const DEGRADATION_EPISODES_FILE: &str = "degradation_episodes.csv";
pub const DEGRADATION_FILE: &str = "prior_degradation.csv";
pub const DEGRADATION_GAPS_FILE: &str = "prior_degradation_gaps.csv";
pub const CPI_FILE: &str = "cpi_diagnostic.csv";
pub const ALPHA_GRID_FILE: &str = "alpha_grid.csv";
pub const ALPHA_STUDY_FILE: &str = "alpha_study.csv";

/// Families whose best operating point enters the Help / Frozen / Hurt verdict.
pub const VERDICT_FAMILIES: [&str; 3] = ["additive", "klreg", "poe"];

/// Outcome of one command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandReport {
    pub files: Vec<PathBuf>,
    /// Checks that did not pass; nonempty means the command should exit with failure.
    pub failures: Vec<String>,
}

impl CommandReport {
    fn write(&mut self, dir: &Path, name: &str, table: &Table) -> Result<()> {
        let path = dir.join(name);
        table.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    pub fn merge(&mut self, other: CommandReport) {
        self.files.extend(other.files);
        self.failures.extend(other.failures);
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

const EPISODE_HEADER: [&str; 14] = [
    "env_id",
    "method_id",
    "family",
    "parameter",
    "goal_id",
    "seed",
    "episode",
    "goal_weighted_return",
    "forward_sum",
    "control_sum",
    "alive_sum",
    "length",
    "terminated",
    "mean_kl_from_actor",
];

fn episode_row(spec: &MethodSpec, r: &EpisodeRecord) -> Vec<Cell> {
    row![
        &r.env_id,
        &r.method_id,
        spec.family(),
        spec.parameter().map_or(Cell::Str(String::new()), Cell::Float),
        &r.goal_id,
        r.seed,
        r.episode,
        r.goal_weighted_return,
        r.forward_sum,
        r.control_sum,
        r.alive_sum,
        r.length,
        r.terminated,
        r.mean_kl_from_actor,
    ]
}

/// The offline dataset and the fitted goal-conditioned critic of the actor.
#[derive(Debug, Clone)]
pub struct CriticFixture {
    pub dataset: Vec<Transition>,
    pub critic: LinearCritic,
    pub report: FqeReport,
}

pub fn critic_fixture(config: &RunConfig) -> Result<CriticFixture> {
    let actor = actor_policy(&config.env);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("dataset", &[config.critic.dataset_seed]));
    let dataset = behavior_dataset(&config.env, &actor, config.critic.dataset_size, &mut rng)?;
    let goals = config.goal_list();
    let (critic, report) = fqe_train(
        &dataset,
        &actor,
        &GoalSampler::Mixture(goals.clone()),
        &goals,
        &config.critic.fqe,
    )?;
    Ok(CriticFixture {
        dataset,
        critic,
        report,
    })
}

/// One (method, goal) cell of episodes.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub spec: MethodSpec,
    pub goal_index: usize,
    pub records: Vec<EpisodeRecord>,
}

/// Rolls every (goal, method) pair with the given per-seed prior.
#[allow(clippy::too_many_arguments)]
fn run_cells(
    config: &RunConfig,
    actor: &LinearGaussianPolicy,
    methods: &[MethodSpec],
    prior_kind: PriorKind,
    critic: Option<&LinearCritic>,
    seeds: &[u64],
    episodes_per_seed: usize,
) -> Result<Vec<CellRun>> {
    let jobs: Vec<(usize, MethodSpec)> = (0..config.goals.len())
        .flat_map(|g| methods.iter().map(move |m| (g, *m)))
        .collect();
    jobs.into_par_iter()
        .map(|(goal_index, spec)| {
            let goal = &config.goals[goal_index];
            let mut records = Vec::with_capacity(seeds.len() * episodes_per_seed);
            for &seed in seeds {
                let prior = make_prior(&config.env, prior_kind, &goal.weights, seed)?;
                let policy = ComposedPolicy::new(spec, actor, &prior, critic, goal.weights, config.kl_convention)?;
                records.extend(rollout(&config.env, &config.env_id, &goal.id, &policy, &[seed], episodes_per_seed)?);
            }
            Ok(CellRun {
                spec,
                goal_index,
                records,
            })
        })
        .collect()
}

fn per_seed_returns(records: &[EpisodeRecord], seeds: &[u64]) -> Vec<Vec<f64>> {
    seeds
        .iter()
        .map(|s| {
            records
                .iter()
                .filter(|r| r.seed == *s)
                .map(|r| r.goal_weighted_return)
                .collect()
        })
        .filter(|v: &Vec<f64>| !v.is_empty())
        .collect()
}

fn keyed(records: &[EpisodeRecord]) -> Vec<Keyed> {
    records
        .iter()
        .map(|r| Keyed {
            seed: r.seed,
            episode: r.episode,
            value: r.goal_weighted_return,
        })
        .collect()
}

fn returns(records: &[EpisodeRecord]) -> Vec<f64> {
    records.iter().map(|r| r.goal_weighted_return).collect()
}

fn mean_kl(records: &[EpisodeRecord]) -> f64 {
    mean(&records.iter().map(|r| r.mean_kl_from_actor).collect::<Vec<_>>())
}

fn cell_seed(config: &RunConfig, tag: &str, labels: &[&str]) -> u64 {
    let mut parts = vec![config.bootstrap.seed];
    parts.extend(labels.iter().map(|l| label_key(l)));
    derive_seed(tag, &parts)
}

fn summarize(config: &RunConfig, run: &CellRun, seeds: &[u64]) -> Result<CellSummary> {
    let goal_id = &config.goals[run.goal_index].id;
    let method_id = run.spec.id();
    CellSummary::from_seeds(
        &method_id,
        &config.env_id,
        goal_id,
        &per_seed_returns(&run.records, seeds),
        config.bootstrap.level,
        config.bootstrap.resamples,
        cell_seed(config, "cell-bootstrap", &[&method_id, goal_id]),
    )
}

fn paired(config: &RunConfig, base: &CellRun, other: &CellRun) -> Result<PairedDiff> {
    let goal_id = &config.goals[base.goal_index].id;
    paired_diff_ci(
        &keyed(&base.records),
        &keyed(&other.records),
        config.bootstrap.level,
        config.bootstrap.resamples,
        cell_seed(config, "paired-bootstrap", &[&base.spec.id(), &other.spec.id(), goal_id]),
    )
}

fn find<'a>(runs: &'a [CellRun], goal_index: usize, spec: &MethodSpec) -> &'a CellRun {
    runs.iter()
        .find(|r| r.goal_index == goal_index && r.spec == *spec)
        .expect("every (goal, method) pair was run")
}

/// PoE / KL-Reg agreement on dataset states for every grid α and goal.
pub fn cmd_audit_equivalence(config: &RunConfig, out: &Path) -> Result<CommandReport> {
    prepare_dir(out)?;
    let actor = actor_policy(&config.env);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("audit-states", &[config.audit.seed]));
    let states: Vec<Vec<f64>> = behavior_dataset(&config.env, &actor, config.audit.n_states, &mut rng)?
        .iter()
        .map(|t| t.state.observation())
        .collect();
    let priors = config
        .goals
        .iter()
        .map(|g| make_prior(&config.env, PriorKind::Trained, &g.weights, 0))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&[
        "alpha",
        "beta",
        "beta_label",
        "n_states",
        "n_goals",
        "max_mean_abs_diff",
        "mean_mean_abs_diff",
        "max_variance_residual",
        "tolerance",
        "pass",
    ]);
    let mut report = CommandReport::default();
    for (alpha, label) in config.alpha_grid.iter().zip(&config.beta_grid) {
        let mut max_mean = 0.0_f64;
        let mut sum_mean = 0.0;
        let mut max_var = 0.0_f64;
        let mut n = 0usize;
        for prior in &priors {
            for s in &states {
                let rec = equivalence_audit(&actor.distribution(s)?, &prior.distribution(s)?, *alpha)?;
                max_mean = max_mean.max(rec.max_mean_abs_diff);
                max_var = max_var.max(rec.variance_identity_residual);
                sum_mean += rec.max_mean_abs_diff;
                n += 1;
            }
        }
        let pass = max_mean <= config.audit.tolerance && max_var <= config.audit.tolerance;
        if !pass {
            report
                .failures
                .push(format!("equivalence residual above tolerance at alpha {alpha}"));
        }
        table.push(row![
            *alpha,
            alpha_to_beta(*alpha)?,
            *label,
            states.len(),
            priors.len(),
            max_mean,
            sum_mean / n as f64,
            max_var,
            config.audit.tolerance,
            pass,
        ]);
    }
    report.write(out, AUDIT_FILE, &table)?;
    Ok(report)
}

/// Main evaluation: 13 methods × goals × seeds × episodes, with summaries, verdicts,
/// matched-pair comparisons, the AWR baseline and quantile-threshold risk rates.
pub fn cmd_rollout(config: &RunConfig, out: &Path) -> Result<CommandReport> {
    prepare_dir(out)?;
    let mut report = CommandReport::default();
    let actor = actor_policy(&config.env);
    let methods = config.main_methods();
    let seeds = &config.seeds;
    let eps = config.episodes_per_seed;
    let runs = run_cells(config, &actor, &methods, PriorKind::Trained, None, seeds, eps)?;

    let mut episodes = Table::new(&EPISODE_HEADER);
    for run in &runs {
        for r in &run.records {
            episodes.push(episode_row(&run.spec, r));
        }
    }
    report.write(out, EPISODES_FILE, &episodes)?;

    let mut per_seed = Table::new(&[
        "env_id",
        "method_id",
        "goal_id",
        "seed",
        "n_episodes",
        "mean_return",
        "mean_kl_from_actor",
    ]);
    for run in &runs {
        for seed in seeds {
            let recs: Vec<EpisodeRecord> = run.records.iter().filter(|r| r.seed == *seed).cloned().collect();
            per_seed.push(row![
                &config.env_id,
                run.spec.id(),
                &config.goals[run.goal_index].id,
                *seed,
                recs.len(),
                mean(&returns(&recs)),
                mean_kl(&recs),
            ]);
        }
    }
    report.write(out, PER_SEED_FILE, &per_seed)?;

    let summaries = runs
        .par_iter()
        .map(|run| summarize(config, run, seeds))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Table::new(&[
        "env_id",
        "method_id",
        "goal_id",
        "n_seeds",
        "n_episodes",
        "mean_return",
        "ci_low",
        "ci_high",
        "half_width",
        "diff_vs_frozen",
        "diff_ci_low",
        "diff_ci_high",
        "prob_improvement_vs_frozen",
        "mean_kl_from_actor",
        "termination_rate",
    ]);
    for (run, s) in runs.iter().zip(&summaries) {
        let frozen = find(&runs, run.goal_index, &MethodSpec::Frozen);
        let d = paired(config, frozen, run)?;
        let term = run.records.iter().filter(|r| r.terminated).count() as f64 / run.records.len() as f64;
        cells.push(row![
            &s.env_id,
            &s.method_id,
            &s.goal_id,
            s.n_seeds,
            s.returns.len(),
            s.mean,
            s.ci_low,
            s.ci_high,
            s.half_width(),
            d.mean_diff,
            d.low,
            d.high,
            prob_improvement(&returns(&run.records), &returns(&frozen.records))?,
            mean_kl(&run.records),
            term,
        ]);
    }
    report.write(out, CELL_FILE, &cells)?;

    let mut diagnostic = Table::new(&[
        "env_id",
        "goal_id",
        "frozen_mean",
        "frozen_ci_low",
        "frozen_ci_high",
        "best_method_id",
        "best_mean",
        "best_gap",
        "half_width",
        "verdict",
        "candidate_families",
    ]);
    for (gi, goal) in config.goals.iter().enumerate() {
        let frozen = summaries
            .iter()
            .zip(&runs)
            .find(|(_, r)| r.goal_index == gi && r.spec == MethodSpec::Frozen)
            .map(|(s, _)| s)
            .expect("frozen cell exists");
        let best = summaries
            .iter()
            .zip(&runs)
            .filter(|(_, r)| r.goal_index == gi && VERDICT_FAMILIES.contains(&r.spec.family()))
            .map(|(s, _)| s)
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
            .expect("composition cells exist");
        let v = classify_cell(frozen, best.mean);
        diagnostic.push(row![
            &config.env_id,
            &goal.id,
            frozen.mean,
            frozen.ci_low,
            frozen.ci_high,
            &best.method_id,
            best.mean,
            v.best_gap,
            v.half_width,
            v.label.to_string(),
            VERDICT_FAMILIES.join("|"),
        ]);
    }
    report.write(out, DIAGNOSTIC_FILE, &diagnostic)?;

    let mut matched = Table::new(&[
        "env_id",
        "goal_id",
        "alpha",
        "beta",
        "beta_label",
        "poe_method_id",
        "klreg_method_id",
        "n_pairs",
        "mean_diff",
        "ci_low",
        "ci_high",
        "max_abs_diff",
        "identical_records",
    ]);
    for gi in 0..config.goals.len() {
        for (alpha, label) in config.alpha_grid.iter().zip(&config.beta_grid) {
            let beta = alpha / (1.0 - alpha);
            let poe = find(&runs, gi, &MethodSpec::Poe { alpha: *alpha });
            let kl = find(&runs, gi, &MethodSpec::KlReg { beta });
            let d = paired(config, poe, kl)?;
            let max_abs = poe
                .records
                .iter()
                .zip(&kl.records)
                .map(|(a, b)| (a.goal_weighted_return - b.goal_weighted_return).abs())
                .fold(0.0, f64::max);
            let identical = poe.records.iter().zip(&kl.records).all(|(a, b)| a.outcome() == b.outcome());
            if !identical || d.mean_diff != 0.0 {
                report
                    .failures
                    .push(format!("matched pair at alpha {alpha} differs for goal {}", config.goals[gi].id));
            }
            matched.push(row![
                &config.env_id,
                &config.goals[gi].id,
                *alpha,
                beta,
                *label,
                poe.spec.id(),
                kl.spec.id(),
                poe.records.len(),
                d.mean_diff,
                d.low,
                d.high,
                max_abs,
                identical,
            ]);
        }
    }
    report.write(out, MATCHED_FILE, &matched)?;

    let fixture = critic_fixture(config)?;
    let mut fqe = Table::new(&["epoch", "td_residual"]);
    for (i, r) in fixture.report.td_residuals.iter().enumerate() {
        fqe.push(row![i, *r]);
    }
    report.write(out, FQE_FILE, &fqe)?;

    let awr_methods = config.awr_methods();
    let awr_runs = run_cells(config, &actor, &awr_methods, PriorKind::Trained, Some(&fixture.critic), seeds, eps)?;
    let mut awr_episodes = Table::new(&EPISODE_HEADER);
    for run in &awr_runs {
        for r in &run.records {
            awr_episodes.push(episode_row(&run.spec, r));
        }
    }
    report.write(out, AWR_EPISODES_FILE, &awr_episodes)?;

    let mut awr = Table::new(&[
        "env_id",
        "goal_id",
        "method_id",
        "mean_return",
        "ci_low",
        "ci_high",
        "diff_vs_frozen",
        "diff_ci_low",
        "diff_ci_high",
        "prob_improvement_vs_frozen",
        "mean_kl_from_actor",
    ]);
    for gi in 0..config.goals.len() {
        let frozen = find(&runs, gi, &MethodSpec::Frozen);
        let best_poe = runs
            .iter()
            .filter(|r| r.goal_index == gi && r.spec.family() == "poe")
            .max_by(|a, b| mean(&returns(&a.records)).total_cmp(&mean(&returns(&b.records))))
            .expect("poe cells exist");
        let rows: Vec<&CellRun> = [frozen, best_poe]
            .into_iter()
            .chain(awr_runs.iter().filter(|r| r.goal_index == gi))
            .collect();
        for run in rows {
            let s = summarize(config, run, seeds)?;
            let d = paired(config, frozen, run)?;
            awr.push(row![
                &config.env_id,
                &config.goals[gi].id,
                &s.method_id,
                s.mean,
                s.ci_low,
                s.ci_high,
                d.mean_diff,
                d.low,
                d.high,
                prob_improvement(&returns(&run.records), &returns(&frozen.records))?,
                mean_kl(&run.records),
            ]);
        }
    }
    report.write(out, AWR_COMPARISON_FILE, &awr)?;

    let states = &fixture.dataset[..config.critic.risk_states.min(fixture.dataset.len())];
    let prior_by_goal = config
        .goals
        .iter()
        .map(|g| make_prior(&config.env, PriorKind::Trained, &g.weights, 0))
        .collect::<Result<Vec<_>>>()?;
    let risk_jobs: Vec<(usize, MethodSpec)> = (0..config.goals.len())
        .flat_map(|g| methods.iter().chain(&awr_methods).map(move |m| (g, *m)))
        .collect();
    let risks = risk_jobs
        .par_iter()
        .map(|(gi, spec)| {
            let policy = ComposedPolicy::new(
                *spec,
                &actor,
                &prior_by_goal[*gi],
                Some(&fixture.critic),
                config.goals[*gi].weights,
                config.kl_convention,
            )?;
            quantile_risk(&policy, &fixture.critic, states, config.critic.risk_percentiles)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut risk = Table::new(&[
        "env_id",
        "goal_id",
        "method_id",
        "n_states",
        "cat_percentile",
        "con_percentile",
        "cat_rate",
        "con_rate",
        "rob",
    ]);
    for ((gi, spec), r) in risk_jobs.iter().zip(&risks) {
        risk.push(row![
            &config.env_id,
            &config.goals[*gi].id,
            spec.id(),
            states.len(),
            config.critic.risk_percentiles.0,
            config.critic.risk_percentiles.1,
            r.cat_rate,
            r.con_rate,
            r.rob,
        ]);
    }
    report.write(out, RISK_FILE, &risk)?;
    Ok(report)
}

/// Cell means of the degradation study, keyed by (variant, method id, goal index).
pub type DegradationMeans = BTreeMap<(String, String, usize), f64>;

/// Every main method under each prior variant on the reduced seed budget.
pub fn cmd_degrade_prior(config: &RunConfig, out: &Path) -> Result<(CommandReport, DegradationMeans)> {
    prepare_dir(out)?;
    let mut report = CommandReport::default();
    let actor = actor_policy(&config.env);
    let methods = config.main_methods();
    let d = &config.degradation;
    let variants = config.degradation.variants.iter().zip(d.prior_kinds()?);
    let mut header = vec!["prior_variant"];
    header.extend(EPISODE_HEADER);
    let mut episodes = Table::new(&header);
    let mut cells = Table::new(&[
        "prior_variant",
        "method_id",
        "goal_id",
        "n_episodes",
        "mean_return",
        "ci_low",
        "ci_high",
        "frozen_mean",
        "gap_vs_frozen",
    ]);
    let mut gaps = Table::new(&["prior_variant", "method_id", "mean_return", "mean_gap_vs_frozen"]);
    let mut means = DegradationMeans::new();
    for (name, kind) in variants {
        let runs = run_cells(config, &actor, &methods, kind, None, &d.seeds, d.episodes_per_seed)?;
        for run in &runs {
            for r in &run.records {
                let mut row = row![name];
                row.extend(episode_row(&run.spec, r));
                episodes.push(row);
            }
        }
        for run in &runs {
            let s = summarize(config, run, &d.seeds)?;
            let frozen_mean = mean(&returns(&find(&runs, run.goal_index, &MethodSpec::Frozen).records));
            means.insert((name.clone(), s.method_id.clone(), run.goal_index), s.mean);
            cells.push(row![
                name,
                &s.method_id,
                &s.goal_id,
                s.returns.len(),
                s.mean,
                s.ci_low,
                s.ci_high,
                frozen_mean,
                s.mean - frozen_mean,
            ]);
        }
        for spec in &methods {
            let per_goal: Vec<(f64, f64)> = (0..config.goals.len())
                .map(|gi| {
                    let m = mean(&returns(&find(&runs, gi, spec).records));
                    let f = mean(&returns(&find(&runs, gi, &MethodSpec::Frozen).records));
                    (m, m - f)
                })
                .collect();
            let n = per_goal.len() as f64;
            gaps.push(row![
                name,
                spec.id(),
                per_goal.iter().map(|p| p.0).sum::<f64>() / n,
                per_goal.iter().map(|p| p.1).sum::<f64>() / n,
            ]);
        }
    }
    report.write(out, DEGRADATION_EPISODES_FILE, &episodes)?;
    report.write(out, DEGRADATION_FILE, &cells)?;
    report.write(out, DEGRADATION_GAPS_FILE, &gaps)?;
    Ok((report, means))
}

/// Systematic-sampling Monte Carlo estimate of `TV(p, q) = E_{a~p}[(1 - q(a)/p(a))_+]`.
///
/// Draws `n` actions at the `p`-quantiles `(k + u) / n` for one uniform offset `u`,
/// so each action is drawn `floor(n p(a))` or `ceil(n p(a))` times and the error is
/// at most `|A| / n`.
fn mc_tv_finite(p: &FinitePolicy, q: &FinitePolicy, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    let mut cdf = 0.0;
    let mut drawn = 0usize;
    let mut total = 0.0;
    let last = p.probs().len() - 1;
    for (a, (&pa, &qa)) in p.probs().iter().zip(q.probs()).enumerate() {
        cdf += pa;
        let upto = if a == last { n } else { ((cdf * n as f64 - u).ceil().max(0.0) as usize).min(n) };
        let count = upto.saturating_sub(drawn);
        drawn += count;
        if count > 0 && pa > 0.0 {
            total += count as f64 * (1.0 - qa / pa).max(0.0);
        }
    }
    total / n as f64
}

/// Conservative-improvement bound on random tabular instances, exact quantities plus
/// Monte Carlo and Pinsker estimates of the policy deviation.
pub fn cmd_cpi_diagnostic(config: &RunConfig, out: &Path) -> Result<CommandReport> {
    prepare_dir(out)?;
    let c = &config.cpi;
    let jobs: Vec<(usize, usize)> = (0..c.gammas.len())
        .flat_map(|gi| (0..c.instances).map(move |i| (gi, i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(gi, inst)| -> Result<Vec<Vec<Cell>>> {
            let gamma = c.gammas[gi];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("cpi-instance", &[c.seed, gi as u64, inst as u64]));
            let mdp = random_mdp(&mut rng, c.n_states, c.n_actions, gamma)?;
            let actor = random_policy(&mut rng, c.n_states, c.n_actions)?;
            let prior = random_policy(&mut rng, c.n_states, c.n_actions)?;
            let mut out = Vec::new();
            for goal in &config.goals {
                for (ai, &alpha) in c.alphas.iter().enumerate() {
                    let refined = TabularPolicy::poe(&actor, &prior, alpha)?;
                    let d = cpi_diagnostic(&mdp, &actor, &refined, &goal.weights)?;
                    let mut mc_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        "cpi-mc",
                        &[c.seed, gi as u64, inst as u64, label_key(&goal.id), ai as u64],
                    ));
                    let mut mc = 0.0_f64;
                    let mut pinsker = 0.0_f64;
                    for (r, a) in refined.rows().iter().zip(actor.rows()) {
                        mc = mc.max(mc_tv_finite(r, a, c.mc_samples, &mut mc_rng));
                        pinsker = pinsker.max(pinsker_tv_bound(finite_kl(r, a)?)?);
                    }
                    let rhs_pinsker = d.gain_term / (1.0 - gamma) - d.penalty_coeff * d.eps_a * pinsker;
                    out.push(row![
                        gamma,
                        inst,
                        &goal.id,
                        alpha,
                        c.n_states,
                        c.n_actions,
                        d.lhs,
                        d.gain_term,
                        d.eps_a,
                        d.delta_pi,
                        mc,
                        pinsker,
                        d.penalty_coeff,
                        d.rhs,
                        rhs_pinsker,
                        d.rhs_unit_proxy,
                        d.holds(1e-9),
                        d.guaranteed_improvement,
                        d.rhs < d.lhs - 10.0 * d.lhs.abs(),
                    ]);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&[
        "gamma",
        "instance",
        "goal_id",
        "alpha",
        "n_states",
        "n_actions",
        "lhs",
        "gain_term",
        "eps_a",
        "delta_tv",
        "delta_tv_mc",
        "delta_tv_pinsker",
        "penalty_coeff",
        "rhs",
        "rhs_pinsker",
        "rhs_unit_proxy",
        "bound_holds",
        "guaranteed_improvement",
        "loose_10x",
    ]);
    let mut report = CommandReport::default();
    for row in rows.into_iter().flatten() {
        if row[16] == Cell::Bool(false) {
            report
                .failures
                .push(format!("improvement bound violated at gamma {:?}, instance {:?}", row[0], row[1]));
        }
        if let (Cell::Float(mc), Cell::Float(pinsker)) = (&row[10], &row[11]) {
            if pinsker < mc {
                report
                    .failures
                    .push(format!("Pinsker bound below the MC estimate at gamma {:?}, instance {:?}", row[0], row[1]));
            }
        }
        table.push(row);
    }
    report.write(out, CPI_FILE, &table)?;
    Ok(report)
}

/// Per-goal α sweep on the validation/test seed split, the KL-budget and
/// validation-best selections, and their loss against the test oracle.
pub fn cmd_alpha_study(config: &RunConfig, out: &Path) -> Result<(CommandReport, BTreeMap<String, Vec<AlphaStudyRow>>)> {
    prepare_dir(out)?;
    let mut report = CommandReport::default();
    let s = &config.alpha_study;
    let actor = actor_policy(&config.env);
    let fixture = critic_fixture(config)?;
    let states = &fixture.dataset[..config.critic.risk_states.min(fixture.dataset.len())];
    let mut grid_table = Table::new(&[
        "goal_id",
        "alpha",
        "val_return",
        "test_return",
        "val_kl",
        "test_kl",
        "cat_rate",
        "kl_convention",
    ]);
    let mut study = Table::new(&[
        "goal_id",
        "rule",
        "kappa",
        "selected_alpha",
        "oracle_alpha",
        "test_return",
        "oracle_return",
        "selection_loss",
        "test_kl",
        "cat_rate",
        "frozen_return",
        "prior_return",
    ]);
    let convention = serde_json::to_value(config.kl_convention)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    let mut all_rows = BTreeMap::new();
    for goal in &config.goals {
        let prior = make_prior(&config.env, PriorKind::Trained, &goal.weights, 0)?;
        let eval = |spec: MethodSpec, seeds: &[u64]| -> Result<(f64, f64)> {
            let policy = ComposedPolicy::new(spec, &actor, &prior, None, goal.weights, config.kl_convention)?;
            let recs = rollout(&config.env, &config.env_id, &goal.id, &policy, seeds, s.episodes_per_seed)?;
            Ok((mean(&returns(&recs)), mean_kl(&recs)))
        };
        let points = s
            .alpha_grid
            .par_iter()
            .map(|&alpha| -> Result<(AlphaGridResult, f64)> {
                let spec = MethodSpec::Poe { alpha };
                let (val_return, val_kl) = eval(spec, &s.validation_seeds)?;
                let (test_return, test_kl) = eval(spec, &s.test_seeds)?;
                let policy = ComposedPolicy::new(spec, &actor, &prior, None, goal.weights, config.kl_convention)?;
                let cat = quantile_risk(&policy, &fixture.critic, states, config.critic.risk_percentiles)?.cat_rate;
                Ok((
                    AlphaGridResult {
                        alpha,
                        val_return,
                        test_return,
                        val_kl,
                        test_kl,
                    },
                    cat,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let grid: Vec<AlphaGridResult> = points.iter().map(|p| p.0).collect();
        let cat_at = |alpha: f64| points.iter().find(|p| p.0.alpha == alpha).map(|p| p.1).unwrap_or(f64::NAN);
        for (p, cat) in &points {
            grid_table.push(row![&goal.id, p.alpha, p.val_return, p.test_return, p.val_kl, p.test_kl, *cat, &convention]);
        }
        let frozen_return = eval(MethodSpec::Frozen, &s.test_seeds)?.0;
        let prior_return = eval(MethodSpec::PriorOnly, &s.test_seeds)?.0;
        let oracle = oracle_select(&grid)?;
        let oracle_return = grid_point(&grid, oracle)?.test_return;
        let mut rows = Vec::new();
        let selections = s
            .kappas
            .iter()
            .map(|k| Ok((Some(*k), kl_budget_select(&grid, *k)?)))
            .chain(std::iter::once(Ok((None, val_best_select(&grid)?))))
            .collect::<Result<Vec<_>>>()?;
        for (kappa, selected) in selections {
            let p = grid_point(&grid, selected)?;
            let loss = selection_loss(selected, &grid)?;
            if loss < 0.0 {
                report.failures.push(format!("negative selection loss for goal {}", goal.id));
            }
            rows.push(AlphaStudyRow {
                kappa,
                selected_alpha: selected,
                selection_loss: loss,
            });
            study.push(row![
                &goal.id,
                if kappa.is_some() { "kl_budget" } else { "val_best" },
                kappa.map_or(Cell::Str(String::new()), Cell::Float),
                selected,
                oracle,
                p.test_return,
                oracle_return,
                loss,
                p.test_kl,
                cat_at(selected),
                frozen_return,
                prior_return,
            ]);
        }
        all_rows.insert(goal.id.clone(), rows);
    }
    report.write(out, ALPHA_GRID_FILE, &grid_table)?;
    report.write(out, ALPHA_STUDY_FILE, &study)?;
    Ok((report, all_rows))
}

/// One selection of the α study; `kappa` is `None` for the validation-best rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStudyRow {
    pub kappa: Option<f64>,
    pub selected_alpha: f64,
    pub selection_loss: f64,
}

/// Runs every experiment command into `out`.
pub fn cmd_all(config: &RunConfig, out: &Path) -> Result<CommandReport> {
    let mut report = cmd_audit_equivalence(config, out)?;
    report.merge(cmd_rollout(config, out)?);
    report.merge(cmd_degrade_prior(config, out)?.0);
    report.merge(cmd_cpi_diagnostic(config, out)?);
    report.merge(cmd_alpha_study(config, out)?.0);
    Ok(report)
}
