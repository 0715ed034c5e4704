use serde::Serialize;

use super::{ComposedPolicy, LinearCritic, Transition};
use crate::error::{Error, Result};
use crate::stats::quantile;

/// Quantile-threshold risk rates of a policy's actions under a critic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskRates {
    /// Fraction of policy actions scored below the lower-tail threshold of dataset Q.
    pub cat_rate: f64,
    /// Same with the deeper-tail threshold; never exceeds `cat_rate`.
    pub con_rate: f64,
    pub rob: f64,
}

impl RiskRates {
    pub fn from_rates(cat_rate: f64, con_rate: f64) -> Self {
        Self {
            cat_rate,
            con_rate,
            rob: 1.0 - cat_rate - 0.5 * con_rate,
        }
    }
}

/// Scores dataset actions and policy actions at the dataset states with `critic`.
/// Thresholds are the `percentiles` (e.g. 10 and 5) of the dataset-action scores.
pub fn quantile_risk(
    policy: &ComposedPolicy<'_>,
    critic: &LinearCritic,
    dataset: &[Transition],
    percentiles: (f64, f64),
) -> Result<RiskRates> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let (p_cat, p_con) = percentiles;
    if !(0.0..=100.0).contains(&p_cat) || !(0.0..=p_cat).contains(&p_con) {
        return Err(Error::param("percentiles", p_con, "need 0 ≤ con ≤ cat ≤ 100"));
    }
    let goal = policy.goal();
    let mut data_q = Vec::with_capacity(dataset.len());
    let mut policy_q = Vec::with_capacity(dataset.len());
    for tr in dataset {
        let obs = tr.state.observation();
        data_q.push(critic.q(&obs, &tr.action, goal)?);
        let (action, _) = policy.act(&obs)?;
        policy_q.push(critic.q(&obs, &action, goal)?);
    }
    risk_from_scores(&data_q, &policy_q, percentiles)
}

/// Risk rates from precomputed critic scores of dataset actions and policy actions.
pub fn risk_from_scores(dataset_scores: &[f64], policy_scores: &[f64], percentiles: (f64, f64)) -> Result<RiskRates> {
    if dataset_scores.is_empty() || policy_scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let mut sorted = dataset_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tau_cat = quantile(&sorted, percentiles.0 / 100.0);
    let tau_con = quantile(&sorted, percentiles.1 / 100.0);
    let n = policy_scores.len() as f64;
    let cat = policy_scores.iter().filter(|q| **q < tau_cat).count() as f64 / n;
    let con = policy_scores.iter().filter(|q| **q < tau_con).count() as f64 / n;
    Ok(RiskRates::from_rates(cat, con))
}
