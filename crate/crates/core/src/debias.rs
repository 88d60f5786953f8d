//! Misclassification-corrected proportions and the standardized two-timepoint
//! statistics for the control and primary samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Floor on `1 - fp - fn` at each timepoint.
pub const RATE_EPS: f64 = 1e-6;

/// Observed counts for one participant: the primary sample and its paired
/// control, each at baseline (T0) and post-vaccination (T1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssayCounts {
    #[serde(rename = "n0")]
    pub pos0: u64,
    #[serde(rename = "N0")]
    pub total0: u64,
    #[serde(rename = "n1")]
    pub pos1: u64,
    #[serde(rename = "N1")]
    pub total1: u64,
    #[serde(rename = "c0")]
    pub ctrl_pos0: u64,
    #[serde(rename = "C0")]
    pub ctrl_total0: u64,
    #[serde(rename = "c1")]
    pub ctrl_pos1: u64,
    #[serde(rename = "C1")]
    pub ctrl_total1: u64,
}

impl AssayCounts {
    /// Builds a validated record. Arguments follow the table layout:
    /// primary (positives, total) at T0 and T1, then control at T0 and T1.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pos0: u64,
        total0: u64,
        pos1: u64,
        total1: u64,
        ctrl_pos0: u64,
        ctrl_total0: u64,
        ctrl_pos1: u64,
        ctrl_total1: u64,
    ) -> Result<Self> {
        let counts = Self {
            pos0,
            total0,
            pos1,
            total1,
            ctrl_pos0,
            ctrl_total0,
            ctrl_pos1,
            ctrl_total1,
        };
        counts.validate()?;
        Ok(counts)
    }

    pub fn validate(&self) -> Result<()> {
        let slots = [
            ("n0", self.pos0, "N0", self.total0),
            ("n1", self.pos1, "N1", self.total1),
            ("c0", self.ctrl_pos0, "C0", self.ctrl_total0),
            ("c1", self.ctrl_pos1, "C1", self.ctrl_total1),
        ];
        for (pos_name, pos, total_name, total) in slots {
            if total == 0 {
                return Err(Error::InvalidCounts(format!(
                    "{total_name} must be positive"
                )));
            }
            if pos > total {
                return Err(Error::InvalidCounts(format!(
                    "{pos_name} = {pos} exceeds {total_name} = {total}"
                )));
            }
        }
        Ok(())
    }

    pub fn primary_props(&self) -> (f64, f64) {
        (
            self.pos0 as f64 / self.total0 as f64,
            self.pos1 as f64 / self.total1 as f64,
        )
    }

    pub fn control_props(&self) -> (f64, f64) {
        (
            self.ctrl_pos0 as f64 / self.ctrl_total0 as f64,
            self.ctrl_pos1 as f64 / self.ctrl_total1 as f64,
        )
    }
}

/// Assay misclassification rates at both timepoints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MisclassRates {
    /// False-positive rate at T0.
    pub fp0: f64,
    /// False-negative rate at T0.
    pub fn0: f64,
    /// False-positive rate at T1.
    pub fp1: f64,
    /// False-negative rate at T1.
    pub fn1: f64,
}

impl MisclassRates {
    pub const ZERO: Self = Self {
        fp0: 0.0,
        fn0: 0.0,
        fp1: 0.0,
        fn1: 0.0,
    };

    pub fn new(fp0: f64, fn0: f64, fp1: f64, fn1: f64) -> Result<Self> {
        let rates = Self { fp0, fn0, fp1, fn1 };
        rates.validate()?;
        Ok(rates)
    }

    /// False positives only; both false-negative rates zero.
    pub fn false_positive(fp0: f64, fp1: f64) -> Result<Self> {
        Self::new(fp0, 0.0, fp1, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fp0", self.fp0),
            ("fn0", self.fn0),
            ("fp1", self.fp1),
            ("fn1", self.fn1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidRates(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (fp, fn_) in [(self.fp0, self.fn0), (self.fp1, self.fn1)] {
            if fp + fn_ > 1.0 - RATE_EPS {
                return Err(Error::DegenerateRates(1.0 - fp - fn_));
            }
        }
        Ok(())
    }

    /// The same rates with T0 and T1 exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            fp0: self.fp1,
            fn0: self.fn1,
            fp1: self.fp0,
            fn1: self.fn0,
        }
    }
}

/// Recovers the true positive proportion from an observed one under the given
/// false-positive and false-negative rates. The result is not clipped to
/// `[0, 1]`.
pub fn debias_proportion(p_obs: f64, fp: f64, fn_: f64) -> Result<f64> {
    let denom = 1.0 - fn_ - fp;
    if denom < RATE_EPS {
        return Err(Error::DegenerateRates(denom));
    }
    Ok((p_obs - fp) / denom)
}

/// Pooled two-timepoint z statistic on debiased proportions.
///
/// A non-positive pooled variance yields `±∞` with the sign of the
/// difference, or `0` when the difference is itself zero.
fn standardized_difference(
    (pos0, total0): (u64, u64),
    (pos1, total1): (u64, u64),
    (fp0, fn0): (f64, f64),
    (fp1, fn1): (f64, f64),
) -> Result<f64> {
    let (n0, n1) = (total0 as f64, total1 as f64);
    let d0 = debias_proportion(pos0 as f64 / n0, fp0, fn0)?;
    let d1 = debias_proportion(pos1 as f64 / n1, fp1, fn1)?;
    let diff = d1 - d0;
    let pooled = (n1 * d1 + n0 * d0) / (n0 + n1);
    let var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n0);
    if var > 0.0 {
        Ok(diff / var.sqrt())
    } else if diff == 0.0 {
        Ok(0.0)
    } else if diff > 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(f64::NEG_INFINITY)
    }
}

/// Standardized change in the debiased control proportion from T0 to T1.
pub fn control_z(counts: &AssayCounts, theta: &MisclassRates) -> Result<f64> {
    standardized_difference(
        (counts.ctrl_pos0, counts.ctrl_total0),
        (counts.ctrl_pos1, counts.ctrl_total1),
        (theta.fp0, theta.fn0),
        (theta.fp1, theta.fn1),
    )
}

/// Standardized change in the debiased primary proportion from T0 to T1.
pub fn responder_z(counts: &AssayCounts, theta: &MisclassRates) -> Result<f64> {
    standardized_difference(
        (counts.pos0, counts.total0),
        (counts.pos1, counts.total1),
        (theta.fp0, theta.fn0),
        (theta.fp1, theta.fn1),
    )
}

/// One-sided responder p-value `1 - Φ(z)` under fixed rates `theta`.
pub fn p_value_at(counts: &AssayCounts, theta: &MisclassRates) -> Result<f64> {
    responder_z(counts, theta).map(normal::upper_tail)
}

/// The p-value that ignores misclassification (`theta = 0`).
pub fn unadjusted_p(counts: &AssayCounts) -> Result<f64> {
    counts.validate()?;
    p_value_at(counts, &MisclassRates::ZERO)
}
