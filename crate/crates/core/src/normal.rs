//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

fn standard() -> &'static Normal {
    static STD: OnceLock<Normal> = OnceLock::new();
    STD.get_or_init(Normal::standard)
}

/// Upper tail `1 - Φ(z)`, exact at the infinities and clamped to `[0, 1]`.
pub fn upper_tail(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return 1.0;
    }
    standard().sf(z).clamp(0.0, 1.0)
}

/// `Φ⁻¹(p)`.
pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

/// Two-sided critical value `Φ⁻¹(1 - alpha/2)`.
pub fn two_sided_critical(alpha: f64) -> f64 {
    quantile(1.0 - alpha / 2.0)
}
