//! Benjamini–Hochberg step-up adjustment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdrDecision {
    /// Position in the input.
    pub index: usize,
    pub p: f64,
    pub p_bh: f64,
    pub rejected: bool,
}

/// BH-adjusted p-values and rejections at FDR level `q`, in input order.
pub fn bh_adjust(pvalues: &[f64], q: f64) -> Result<Vec<FdrDecision>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "FDR level {q} must lie in (0, 1)"
        )));
    }
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidConfig(format!(
            "p-value {bad} outside [0, 1]"
        )));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    // stable: ties keep input order
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        // m·p/rank ≥ p in exact arithmetic; keep it so after rounding
        let scaled = (m as f64 * pvalues[i] / (rank + 1) as f64)
            .max(pvalues[i])
            .min(1.0);
        running = running.min(scaled);
        adjusted[i] = running;
    }
    Ok(pvalues
        .iter()
        .zip(adjusted)
        .enumerate()
        .map(|(index, (&p, p_bh))| FdrDecision {
            index,
            p,
            p_bh,
            rejected: p_bh <= q,
        })
        .collect())
}
