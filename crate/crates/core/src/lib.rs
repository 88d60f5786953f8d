//! Vaccine responder calls from paired pre/post single-cell assay counts,
//! adjusted for assay misclassification learned from paired control samples.
//!
//! For each participant the crate reports three one-sided p-values for an
//! increase in the true positive-cell proportion from baseline (T0) to
//! post-vaccination (T1):
//!
//! * the unadjusted p-value, a pooled two-proportion z-test ignoring
//!   misclassification;
//! * the maximally adjusted p-value, the largest p-value over all
//!   misclassification rates compatible with the control data at level
//!   `alpha'`, plus `alpha'`;
//! * the minimally adjusted p-value, the compatible p-value closest to the
//!   unadjusted one at level `alpha`.
//!
//! ```
//! use responder_core::prelude::*;
//!
//! let counts = AssayCounts::new(31, 69_540, 85, 93_562, 8, 93_883, 15, 212_650)?;
//! let cfg = SetConfig::default().pin_false_negatives();
//! let result = analyze_participant(&counts, &cfg.clone().with_alpha(0.005), &cfg, true)?;
//! assert!(result.unadjusted_in_set);
//! # Ok::<(), responder_core::Error>(())
//! ```

pub mod adjust;
pub mod debias;
pub mod error;
pub mod fdr;
pub mod interval;
pub mod normal;
pub mod nuisance;
pub mod sim;
pub mod study;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::adjust::{
        analyze_participant, max_adjusted_from_grid, max_adjusted_p, min_adjusted_from_grid,
        min_adjusted_p, ResponderResult,
    };
    pub use crate::debias::{
        control_z, debias_proportion, p_value_at, responder_z, unadjusted_p, AssayCounts,
        MisclassRates,
    };
    pub use crate::error::{Error, Result};
    pub use crate::fdr::{bh_adjust, FdrDecision};
    pub use crate::interval::IntervalMethod;
    pub use crate::nuisance::{
        build_grid, in_confidence_set, ControlKind, NuisanceGrid, SetConfig,
    };
    pub use crate::sim::{run_cell, Scenario, SimulationConfig, SimulationSummary};
    pub use crate::study::{
        analyze_study, background_subtracted_magnitude, load_study, per_protocol_filter,
        AnalysisReport, DecisionConfig, StudyRecord,
    };
}
