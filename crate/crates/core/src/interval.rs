//! Two-sided confidence intervals for a binomial proportion.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    /// Score interval.
    #[default]
    Wilson,
    /// Exact interval from beta quantiles.
    ClopperPearson,
}

/// Two-sided interval for `successes / trials` at the given confidence level.
pub fn binomial_interval(
    successes: u64,
    trials: u64,
    confidence: f64,
    method: IntervalMethod,
) -> (f64, f64) {
    debug_assert!(trials > 0 && successes <= trials);
    match method {
        IntervalMethod::Wilson => wilson(successes, trials, confidence),
        IntervalMethod::ClopperPearson => clopper_pearson(successes, trials, confidence),
    }
}

fn wilson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = normal::two_sided_critical(1.0 - confidence);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // the score interval always contains 0 at x = 0 and 1 at x = n
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    let tail = (1.0 - confidence) / 2.0;
    let x = successes as f64;
    let n = trials as f64;
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).unwrap().inverse_cdf(tail)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).unwrap().inverse_cdf(1.0 - tail)
    };
    (lo, hi)
}
