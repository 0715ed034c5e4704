//! Package validator: manifest integrity, cell coverage, finiteness, seed
//! consistency and zero matched-pair differences.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;
use crate::manifest::{self, Manifest};
use crate::report::CsvData;
use crate::runner::{DIAGNOSTIC_FILE, EPISODES_FILE, MATCHED_FILE};

fn is_non_finite(cell: &str) -> bool {
    matches!(cell.to_ascii_lowercase().as_str(), "nan" | "inf" | "-inf" | "+inf" | "infinity" | "-infinity")
}

/// Returns one message per problem; an empty list means the package is valid.
pub fn validate_package(dir: &Path) -> Result<Vec<String>> {
    let mut problems = manifest::verify(dir)?;
    if !problems.is_empty() {
        return Ok(problems);
    }
    let (manifest, _) = Manifest::read(dir)?;
    let config = match manifest.run_config() {
        Ok(c) => c,
        Err(e) => return Ok(vec![format!("manifest config: {e}")]),
    };
    if manifest.seeds != config.seeds {
        problems.push("manifest seed list differs from the configuration".into());
    }

    for entry in manifest.files.iter().filter(|f| f.path.ends_with(".csv")) {
        let data = CsvData::read(&dir.join(&entry.path))?;
        let bad = data.records.iter().flatten().filter(|c| is_non_finite(c)).count();
        if bad > 0 {
            problems.push(format!("{}: {bad} non-finite values", entry.path));
        }
    }

    let episodes_path = dir.join(EPISODES_FILE);
    if !episodes_path.exists() {
        problems.push(format!("{EPISODES_FILE}: missing"));
        return Ok(problems);
    }
    let episodes = CsvData::read(&episodes_path)?;
    let col = |name: &str| episodes.column(name).expect("episode schema column");
    let (c_env, c_method, c_goal, c_seed, c_ep) =
        (col("env_id"), col("method_id"), col("goal_id"), col("seed"), col("episode"));
    let mut seen: BTreeMap<(String, String, String, String), usize> = BTreeMap::new();
    for rec in &episodes.records {
        if rec[c_env] != config.env_id {
            problems.push(format!("{EPISODES_FILE}: unexpected env_id {}", rec[c_env]));
        }
        let key = (rec[c_method].clone(), rec[c_goal].clone(), rec[c_seed].clone(), rec[c_ep].clone());
        *seen.entry(key).or_default() += 1;
    }
    let mut expected = 0usize;
    for spec in config.main_methods() {
        for goal in &config.goals {
            for seed in &config.seeds {
                for ep in 0..config.episodes_per_seed {
                    expected += 1;
                    let key = (spec.id(), goal.id.clone(), seed.to_string(), ep.to_string());
                    match seen.get(&key) {
                        Some(1) => {}
                        Some(n) => problems.push(format!("{EPISODES_FILE}: {key:?} appears {n} times")),
                        None => problems.push(format!("{EPISODES_FILE}: missing {key:?}")),
                    }
                }
            }
        }
    }
    if episodes.records.len() != expected {
        problems.push(format!(
            "{EPISODES_FILE}: {} rows, expected {expected}",
            episodes.records.len()
        ));
    }
    let allowed: Vec<String> = config.seeds.iter().map(u64::to_string).collect();
    if episodes.records.iter().any(|r| !allowed.contains(&r[c_seed])) {
        problems.push(format!("{EPISODES_FILE}: seeds outside the configured list"));
    }

    let matched_path = dir.join(MATCHED_FILE);
    if matched_path.exists() {
        let m = CsvData::read(&matched_path)?;
        let (c_diff, c_same) = (
            m.column("mean_diff").expect("matched schema"),
            m.column("identical_records").expect("matched schema"),
        );
        for rec in &m.records {
            if rec[c_diff].parse::<f64>() != Ok(0.0) || rec[c_same] != "true" {
                problems.push(format!("{MATCHED_FILE}: nonzero matched-pair difference {rec:?}"));
            }
        }
        if m.records.len() != config.goals.len() * config.alpha_grid.len() {
            problems.push(format!("{MATCHED_FILE}: incomplete coverage"));
        }
    } else {
        problems.push(format!("{MATCHED_FILE}: missing"));
    }

    let diag_path = dir.join(DIAGNOSTIC_FILE);
    if diag_path.exists() {
        let d = CsvData::read(&diag_path)?;
        let c_verdict = d.column("verdict").expect("diagnostic schema");
        let labelled = d
            .records
            .iter()
            .filter(|r| ["Help", "Frozen", "Hurt"].contains(&r[c_verdict].as_str()))
            .count();
        if labelled != config.goals.len() || d.records.len() != config.goals.len() {
            problems.push(format!("{DIAGNOSTIC_FILE}: verdict count does not match cell count"));
        }
    }
    Ok(problems)
}
