//! Choosing the PoE weight α from a validation sweep: a KL-budget rule, a
//! validation-best rule, and the selection loss against the test-split oracle.

use serde::Serialize;

use crate::error::{Error, Result};

/// One α of a validation/test sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaGridResult {
    pub alpha: f64,
    pub val_return: f64,
    pub test_return: f64,
    pub val_kl: f64,
    pub test_kl: f64,
}

fn check_grid(grid: &[AlphaGridResult]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("alpha grid"));
    }
    for p in grid {
        if !(p.val_kl >= 0.0 && p.test_kl >= 0.0) {
            return Err(Error::param("val_kl", p.val_kl.min(p.test_kl), "must be non-negative"));
        }
        if !p.alpha.is_finite() || !p.val_return.is_finite() || !p.test_return.is_finite() {
            return Err(Error::NonFinite("alpha grid entry"));
        }
    }
    let mut alphas: Vec<f64> = grid.iter().map(|p| p.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    if alphas.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::param("alpha", alphas[0], "grid values must be distinct"));
    }
    Ok(())
}

/// Smallest α whose validation KL fits the budget `kappa`; if none fits, the α with
/// the smallest validation KL (ties go to the larger α).
pub fn kl_budget_select(grid: &[AlphaGridResult], kappa: f64) -> Result<f64> {
    check_grid(grid)?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::param("kappa", kappa, "must be positive"));
    }
    let admissible = grid
        .iter()
        .filter(|p| p.val_kl <= kappa)
        .map(|p| p.alpha)
        .min_by(f64::total_cmp);
    Ok(admissible.unwrap_or_else(|| {
        grid.iter()
            .min_by(|a, b| a.val_kl.total_cmp(&b.val_kl).then(b.alpha.total_cmp(&a.alpha)))
            .expect("grid is nonempty")
            .alpha
    }))
}

/// α with the highest validation return; ties go to the larger α.
pub fn val_best_select(grid: &[AlphaGridResult]) -> Result<f64> {
    check_grid(grid)?;
    Ok(grid
        .iter()
        .max_by(|a, b| a.val_return.total_cmp(&b.val_return).then(a.alpha.total_cmp(&b.alpha)))
        .expect("grid is nonempty")
        .alpha)
}

/// Test-split oracle: α with the highest test return; ties go to the larger α.
pub fn oracle_select(grid: &[AlphaGridResult]) -> Result<f64> {
    check_grid(grid)?;
    Ok(grid
        .iter()
        .max_by(|a, b| a.test_return.total_cmp(&b.test_return).then(a.alpha.total_cmp(&b.alpha)))
        .expect("grid is nonempty")
        .alpha)
}

/// Grid entry for `alpha`, matched exactly.
pub fn grid_point(grid: &[AlphaGridResult], alpha: f64) -> Result<&AlphaGridResult> {
    grid.iter().find(|p| p.alpha == alpha).ok_or(Error::NotInGrid(alpha))
}

/// Best test return over the grid minus the test return at `selected`.
pub fn selection_loss(selected: f64, grid: &[AlphaGridResult]) -> Result<f64> {
    check_grid(grid)?;
    let at = grid_point(grid, selected)?.test_return;
    let best = grid.iter().map(|p| p.test_return).fold(f64::NEG_INFINITY, f64::max);
    Ok(best - at)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(alpha: f64, val_return: f64, test_return: f64, val_kl: f64) -> AlphaGridResult {
        AlphaGridResult {
            alpha,
            val_return,
            test_return,
            val_kl,
            test_kl: val_kl,
        }
    }

    fn table_grid() -> Vec<AlphaGridResult> {
        vec![
            point(0.05, 5.46, 5.4636, 0.782),
            point(0.3, 5.45, 5.4542, 0.372),
            point(0.5, 5.44, 5.4508, 0.208),
            point(0.8, 5.43, 5.4432, 0.054),
        ]
    }

    #[test]
    fn budget_examples() {
        let g = table_grid();
        assert_eq!(kl_budget_select(&g, 10.0).unwrap(), 0.05);
        assert_eq!(kl_budget_select(&g, 0.1).unwrap(), 0.8);
        assert_eq!(kl_budget_select(&g, 0.3).unwrap(), 0.5);
        assert_eq!(kl_budget_select(&g, 1.0).unwrap(), 0.05);
        assert_eq!(kl_budget_select(&g, 0.01).unwrap(), 0.8);
        assert!(kl_budget_select(&[], 1.0).is_err());
        assert!(kl_budget_select(&g, 0.0).is_err());
    }

    #[test]
    fn budget_fallback_breaks_ties_toward_larger_alpha() {
        let g = vec![point(0.2, 0.0, 0.0, 0.5), point(0.6, 0.0, 0.0, 0.5), point(0.4, 0.0, 0.0, 0.9)];
        assert_eq!(kl_budget_select(&g, 0.1).unwrap(), 0.6);
    }

    #[test]
    fn val_best_examples() {
        assert_eq!(val_best_select(&table_grid()).unwrap(), 0.05);
        assert_eq!(val_best_select(&[point(0.3, 1.0, 1.0, 0.1)]).unwrap(), 0.3);
        let tie = vec![point(0.1, 2.0, 0.0, 0.1), point(0.7, 2.0, 0.0, 0.1), point(0.5, 1.0, 0.0, 0.1)];
        assert_eq!(val_best_select(&tie).unwrap(), 0.7);
        assert!(val_best_select(&[]).is_err());
    }

    #[test]
    fn loss_examples() {
        let g = table_grid();
        assert_eq!(selection_loss(0.05, &g).unwrap(), 0.0);
        let two = vec![point(0.1, 0.0, 5.46, 0.1), point(0.9, 0.0, 5.44, 0.1)];
        assert!((selection_loss(0.9, &two).unwrap() - 0.02).abs() < 1e-12);
        let flat = vec![point(0.1, 0.0, 1.0, 0.1), point(0.9, 0.0, 1.0, 0.1)];
        assert_eq!(selection_loss(0.9, &flat).unwrap(), 0.0);
        assert!(matches!(selection_loss(0.4, &g), Err(Error::NotInGrid(_))));
    }

    #[test]
    fn budgets_are_monotone_on_decreasing_kl() {
        let g = table_grid();
        let kappas = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0, 5.0];
        let sel: Vec<f64> = kappas.iter().map(|k| kl_budget_select(&g, *k).unwrap()).collect();
        assert!(sel.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_duplicate_alphas() {
        let g = vec![point(0.5, 0.0, 0.0, 0.1), point(0.5, 1.0, 0.0, 0.1)];
        assert!(val_best_select(&g).is_err());
    }
}
