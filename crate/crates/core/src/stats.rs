//! Percentile bootstrap intervals, seed-matched paired differences, probability of
//! improvement and the Help / Frozen / Hurt cell verdict.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Linearly interpolated quantile of an ascending slice, `p ∈ [0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn check_bootstrap(level: f64, resamples: usize) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param("level", level, "must lie in (0, 1)"));
    }
    if resamples < 100 {
        return Err(Error::param("resamples", resamples as f64, "must be at least 100"));
    }
    Ok(())
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile(&stats, tail), quantile(&stats, 1.0 - tail))
}

/// Percentile bootstrap interval for the mean.
///
/// Values are put in canonical (sorted) order before resampling, so the interval
/// depends only on the multiset of values and the seed.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if values.len() < 2 {
        return Err(Error::param("values", values.len() as f64, "need at least two values"));
    }
    check_bootstrap(level, resamples)?;
    stratified_bootstrap_ci(&[values.to_vec()], level, resamples, seed)
}

/// Percentile bootstrap of the grand mean, resampling within each stratum.
pub fn stratified_bootstrap_ci(
    strata: &[Vec<f64>],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_bootstrap(level, resamples)?;
    if strata.is_empty() || strata.iter().any(Vec::is_empty) {
        return Err(Error::Empty("bootstrap stratum"));
    }
    let sorted: Vec<Vec<f64>> = strata
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    let total: usize = sorted.iter().map(Vec::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..resamples)
        .map(|_| {
            let mut sum = 0.0;
            for s in &sorted {
                for _ in 0..s.len() {
                    sum += s[rng.random_range(0..s.len())];
                }
            }
            sum / total as f64
        })
        .collect();
    Ok(percentile_interval(stats, level))
}

/// Return observed under one `(seed, episode)` key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyed {
    pub seed: u64,
    pub episode: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedDiff {
    pub mean_diff: f64,
    pub low: f64,
    pub high: f64,
}

/// Aligns two keyed samples and returns `b - a` per key, in key order.
pub fn paired_differences(a: &[Keyed], b: &[Keyed]) -> Result<Vec<f64>> {
    let index = |xs: &[Keyed]| -> Result<BTreeMap<(u64, u64), f64>> {
        let mut m = BTreeMap::new();
        for x in xs {
            if m.insert((x.seed, x.episode), x.value).is_some() {
                return Err(Error::Misaligned(format!(
                    "duplicate key (seed {}, episode {})",
                    x.seed, x.episode
                )));
            }
        }
        Ok(m)
    };
    let ma = index(a)?;
    let mb = index(b)?;
    if ma.len() != mb.len() || ma.keys().zip(mb.keys()).any(|(x, y)| x != y) {
        return Err(Error::Misaligned("key sets differ".into()));
    }
    Ok(ma.values().zip(mb.values()).map(|(x, y)| y - x).collect())
}

/// Seed-matched paired comparison: bootstrap interval of the mean of `b - a`.
pub fn paired_diff_ci(a: &[Keyed], b: &[Keyed], level: f64, resamples: usize, seed: u64) -> Result<PairedDiff> {
    let diffs = paired_differences(a, b)?;
    if diffs.is_empty() {
        return Err(Error::Empty("paired sample"));
    }
    let (low, high) = bootstrap_ci(&diffs, level, resamples, seed)?;
    Ok(PairedDiff {
        mean_diff: mean(&diffs),
        low,
        high,
    })
}

/// Probability that a draw from `a` beats a draw from `b`, over all pairs, ties ½.
pub fn prob_improvement(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("probability of improvement sample"));
    }
    let mut wins = 0.0;
    for x in a {
        for y in b {
            if x > y {
                wins += 1.0;
            } else if x == y {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (a.len() * b.len()) as f64)
}

/// Aggregate of one (method, environment, goal) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method_id: String,
    pub env_id: String,
    pub goal_id: String,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_seeds: usize,
}

impl CellSummary {
    /// Builds the summary from per-seed episode returns. The interval resamples
    /// episodes within each seed and is widened, if needed, to contain the mean.
    pub fn from_seeds(
        method_id: &str,
        env_id: &str,
        goal_id: &str,
        per_seed: &[Vec<f64>],
        level: f64,
        resamples: usize,
        seed: u64,
    ) -> Result<Self> {
        let (low, high) = stratified_bootstrap_ci(per_seed, level, resamples, seed)?;
        let returns: Vec<f64> = per_seed.iter().flatten().copied().collect();
        let m = mean(&returns);
        Ok(Self {
            method_id: method_id.to_string(),
            env_id: env_id.to_string(),
            goal_id: goal_id.to_string(),
            returns,
            mean: m,
            ci_low: low.min(m),
            ci_high: high.max(m),
            n_seeds: per_seed.len(),
        })
    }

    /// One-sided half-width `max(high - mean, mean - low)`.
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.mean).max(self.mean - self.ci_low)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    Help,
    Frozen,
    Hurt,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Help => "Help",
            Label::Frozen => "Frozen",
            Label::Hurt => "Hurt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub label: Label,
    /// `best - frozen.mean`.
    pub best_gap: f64,
    pub half_width: f64,
}

/// Help if the best composition beats the frozen mean by more than one half-width,
/// Hurt if it trails by more than one half-width, Frozen otherwise.
pub fn classify_cell(frozen: &CellSummary, composition_best_mean: f64) -> Verdict {
    let eps = frozen.half_width();
    let gap = composition_best_mean - frozen.mean;
    let label = if gap > eps {
        Label::Help
    } else if -gap > eps {
        Label::Hurt
    } else {
        Label::Frozen
    };
    Verdict {
        label,
        best_gap: gap,
        half_width: eps,
    }
}
