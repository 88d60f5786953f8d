//! Maximally and minimally adjusted responder p-values.
//!
//! The maximally adjusted p-value is the supremum of the responder p-value
//! over the level-`alpha'` confidence set plus `alpha'`. It stays valid at
//! any decision level `alpha > alpha'` whatever the true rates are.
//!
//! The minimally adjusted p-value is the p-value in the image of the
//! level-`alpha` set nearest to the unadjusted one. It cannot be falsified
//! by the control data but carries no strict type-I guarantee.

use serde::{Deserialize, Serialize};

use crate::debias::{self, AssayCounts};
use crate::error::Result;
use crate::nuisance::{build_grid, NuisanceGrid, SetConfig};

/// Reason attached to an undefined minimally adjusted p-value.
pub const EMPTY_SET_DIAGNOSTIC: &str =
    "empty confidence set: shared-misclassification assumption suspect";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderResult {
    pub p_unadjusted: f64,
    pub p_max_adjusted: f64,
    /// `None` when the level-`alpha` set is empty.
    pub p_min_adjusted: Option<f64>,
    pub alpha_prime: f64,
    pub alpha: f64,
    /// Whether the level-`alpha'` set produced any admissible p-value.
    pub set_nonempty: bool,
    /// `(inf, sup)` of the p-values over the level-`alpha` set.
    pub p_range: Option<(f64, f64)>,
    /// Whether the unadjusted p-value lies inside `p_range`.
    pub unadjusted_in_set: bool,
}

impl ResponderResult {
    pub fn min_adjusted_diagnostic(&self) -> Option<&'static str> {
        self.p_min_adjusted
            .is_none()
            .then_some(EMPTY_SET_DIAGNOSTIC)
    }
}

/// `min(1, sup + alpha')` from a grid built at level `alpha'`, or 1 when the
/// grid holds no admissible point.
pub fn max_adjusted_from_grid(grid: &NuisanceGrid) -> f64 {
    match grid.sup_p {
        Some(sup) => (sup + grid.config.alpha).min(1.0),
        None => 1.0,
    }
}

/// Nearest admissible p-value to `p_star`, or `p_star` itself when the
/// grid's p-values bracket it.
///
/// Equidistant candidates resolve to the smaller p-value.
pub fn min_adjusted_from_grid(grid: &NuisanceGrid, p_star: f64) -> Option<f64> {
    let (inf, sup) = grid.p_range()?;
    if inf <= p_star && p_star <= sup {
        return Some(p_star);
    }
    nearest(grid.admissible().map(|p| p.p_theta), p_star)
}

/// Candidate closest to `target`; equidistant candidates resolve to the
/// smaller value.
fn nearest(candidates: impl Iterator<Item = f64>, target: f64) -> Option<f64> {
    candidates.fold(None, |best, p| match best {
        Some(b) => {
            let (d, db) = ((target - p).abs(), (target - b).abs());
            Some(if d < db || (d == db && p < b) { p } else { b })
        }
        None => Some(p),
    })
}

/// Maximally adjusted p-value with the set built at `cfg.alpha` (`alpha'`).
/// Compare it only against decision levels strictly above `cfg.alpha`.
pub fn max_adjusted_p(counts: &AssayCounts, cfg: &SetConfig, assume_equal_fn: bool) -> Result<f64> {
    build_grid(counts, cfg, assume_equal_fn).map(|g| max_adjusted_from_grid(&g))
}

pub fn min_adjusted_p(
    counts: &AssayCounts,
    cfg: &SetConfig,
    assume_equal_fn: bool,
) -> Result<Option<f64>> {
    let p_star = debias::unadjusted_p(counts)?;
    build_grid(counts, cfg, assume_equal_fn).map(|g| min_adjusted_from_grid(&g, p_star))
}

/// All three p-values for one participant. `cfg_max.alpha` is `alpha'` and
/// `cfg_min.alpha` the decision level.
pub fn analyze_participant(
    counts: &AssayCounts,
    cfg_max: &SetConfig,
    cfg_min: &SetConfig,
    assume_equal_fn: bool,
) -> Result<ResponderResult> {
    let p_star = debias::unadjusted_p(counts)?;
    let max_grid = build_grid(counts, cfg_max, assume_equal_fn)?;
    let min_grid = if cfg_min == cfg_max {
        None
    } else {
        Some(build_grid(counts, cfg_min, assume_equal_fn)?)
    };
    let min_grid = min_grid.as_ref().unwrap_or(&max_grid);
    Ok(assemble(p_star, &max_grid, min_grid))
}

pub(crate) fn assemble(
    p_star: f64,
    max_grid: &NuisanceGrid,
    min_grid: &NuisanceGrid,
) -> ResponderResult {
    let p_range = min_grid.p_range();
    ResponderResult {
        p_unadjusted: p_star,
        p_max_adjusted: max_adjusted_from_grid(max_grid),
        p_min_adjusted: min_adjusted_from_grid(min_grid, p_star),
        alpha_prime: max_grid.config.alpha,
        alpha: min_grid.config.alpha,
        set_nonempty: max_grid.sup_p.is_some(),
        p_range,
        unadjusted_in_set: p_range.is_some_and(|(lo, hi)| lo <= p_star && p_star <= hi),
    }
}
