//! Monte Carlo study of type-I error and power for the unadjusted, maximally
//! adjusted, minimally adjusted and ground-truth procedures.
//!
//! Each replication draws from its own ChaCha stream selected by the
//! replication index, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::{max_adjusted_from_grid, min_adjusted_from_grid};
use crate::debias::{self, AssayCounts, MisclassRates};
use crate::error::{Error, Result};
use crate::nuisance::{build_grid, SetConfig};

pub const DEFAULT_SEED: u64 = 20240101;

/// Batch-effect scenario: how the false-positive rates are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// No batch effect: one false-positive rate shared by both runs.
    I,
    II,
    III,
    IV,
}

impl Scenario {
    /// Beta shape parameters for the T0 and T1 false-positive rates.
    pub fn fp_shapes(self) -> ((f64, f64), (f64, f64)) {
        match self {
            Scenario::I => ((1.0, 2000.0), (1.0, 2000.0)),
            Scenario::II => ((1.0, 2000.0), (2.0, 2000.0)),
            Scenario::III => ((3.0, 2000.0), (6.0, 2000.0)),
            Scenario::IV => ((1.0, 2000.0), (5.0, 2000.0)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
            Scenario::IV => "IV",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            "IV" | "4" => Ok(Scenario::IV),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }
}

/// True control positive proportion paired with each control sample size.
/// 50,000 has no published pairing and uses a log-interpolated 0.002.
pub fn paired_control_proportion(n_control: u64) -> Option<f64> {
    match n_control {
        1_000 => Some(0.03),
        10_000 => Some(0.005),
        50_000 => Some(0.002),
        100_000 => Some(0.001),
        _ => None,
    }
}

/// Set configuration used inside simulations: coarser than the analysis
/// default to keep whole cells tractable.
pub fn simulation_grid() -> SetConfig {
    SetConfig {
        grid_fp: 51,
        refine_levels: 1,
        ..SetConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scenario: Scenario,
    /// Post-vaccination multiplier on the true positive proportion of
    /// responders.
    pub gamma: f64,
    /// Primary totals at both timepoints.
    pub n_primary: u64,
    /// Control totals at both timepoints.
    pub n_control: u64,
    pub p_control: f64,
    /// Probability that a replication is a true responder.
    pub responder_prob: f64,
    pub reps: usize,
    pub seed: u64,
    /// Decision level.
    pub alpha: f64,
    /// Level of the set behind the maximally adjusted p-value.
    pub alpha_prime: f64,
    /// Template for both sets; its `alpha` is overridden.
    pub grid: SetConfig,
}

impl SimulationConfig {
    /// A cell with the published defaults. Fails when `n_control` has no
    /// paired control proportion; set `p_control` by hand in that case.
    pub fn new(scenario: Scenario, gamma: f64, n_control: u64) -> Result<Self> {
        let p_control = paired_control_proportion(n_control).ok_or_else(|| {
            Error::InvalidConfig(format!("no paired control proportion for N' = {n_control}"))
        })?;
        Ok(Self {
            scenario,
            gamma,
            n_primary: 50_000,
            n_control,
            p_control,
            responder_prob: 0.5,
            reps: 2000,
            seed: DEFAULT_SEED,
            alpha: 0.05,
            alpha_prime: 0.005,
            grid: simulation_grid(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.gamma.is_nan() || self.gamma <= 1.0 {
            return bad(format!("gamma = {} must exceed 1", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.p_control) {
            return bad(format!("p_control = {} outside [0, 1]", self.p_control));
        }
        if !(0.0..=1.0).contains(&self.responder_prob) {
            return bad(format!(
                "responder_prob = {} outside [0, 1]",
                self.responder_prob
            ));
        }
        if self.n_primary == 0 || self.n_control == 0 {
            return bad("sample sizes must be positive".into());
        }
        if self.alpha_prime.is_nan() || self.alpha_prime >= self.alpha {
            return bad(format!(
                "alpha' = {} must be below alpha = {}",
                self.alpha_prime, self.alpha
            ));
        }
        self.grid.clone().with_alpha(self.alpha).validate()?;
        self.grid.clone().with_alpha(self.alpha_prime).validate()
    }

    fn max_set(&self) -> SetConfig {
        self.grid.clone().with_alpha(self.alpha_prime)
    }

    fn min_set(&self) -> SetConfig {
        self.grid.clone().with_alpha(self.alpha)
    }
}

/// Generating quantities behind one simulated record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub responder: bool,
    pub theta: MisclassRates,
    pub p_t0: f64,
    pub p_t1: f64,
}

fn beta(rng: &mut impl Rng, (a, b): (f64, f64)) -> f64 {
    Beta::new(a, b).expect("valid beta shapes").sample(rng)
}

fn binomial(rng: &mut impl Rng, n: u64, p: f64) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("valid binomial")
        .sample(rng)
}

/// Observed-positive probability for true proportion `p`.
fn contaminated(p: f64, fp: f64, fn_: f64) -> f64 {
    p * (1.0 - fn_) + (1.0 - p) * fp
}

/// Draws one participant's counts and the truth that generated them.
pub fn draw_instance(cfg: &SimulationConfig, rng: &mut impl Rng) -> (AssayCounts, Truth) {
    let responder = rng.random_bool(cfg.responder_prob);
    let p_t0 = beta(rng, (1.0, 500.0));
    let p_t1 = if responder {
        (cfg.gamma * p_t0).min(1.0)
    } else {
        p_t0
    };

    let fn_shared = beta(rng, (1.0, 5.0));
    let (shape0, shape1) = cfg.scenario.fp_shapes();
    let fp0 = beta(rng, shape0);
    let fp1 = if cfg.scenario == Scenario::I {
        fp0
    } else {
        beta(rng, shape1)
    };
    let theta = MisclassRates {
        fp0,
        fn0: fn_shared,
        fp1,
        fn1: fn_shared,
    };

    let n = cfg.n_primary;
    let c = cfg.n_control;
    let counts = AssayCounts {
        pos0: binomial(rng, n, contaminated(p_t0, fp0, fn_shared)),
        total0: n,
        pos1: binomial(rng, n, contaminated(p_t1, fp1, fn_shared)),
        total1: n,
        ctrl_pos0: binomial(rng, c, contaminated(cfg.p_control, fp0, fn_shared)),
        ctrl_total0: c,
        ctrl_pos1: binomial(rng, c, contaminated(cfg.p_control, fp1, fn_shared)),
        ctrl_total1: c,
    };
    (
        counts,
        Truth {
            responder,
            theta,
            p_t0,
            p_t1,
        },
    )
}

/// The responder p-value at the generating rates.
pub fn true_oracle_p(counts: &AssayCounts, theta_true: &MisclassRates) -> Result<f64> {
    debias::p_value_at(counts, theta_true)
}

/// Outcome of a single replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub counts: AssayCounts,
    pub truth: Truth,
    pub p_unadjusted: f64,
    pub p_max_adjusted: f64,
    pub p_min_adjusted: Option<f64>,
    pub p_truth: f64,
}

/// The RNG stream owned by replication `rep`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn run_replication(cfg: &SimulationConfig, rep: usize) -> Result<Replication> {
    let mut rng = replication_rng(cfg.seed, rep);
    let (counts, truth) = draw_instance(cfg, &mut rng);
    let p_star = debias::unadjusted_p(&counts)?;
    let max_grid = build_grid(&counts, &cfg.max_set(), true)?;
    let min_grid = build_grid(&counts, &cfg.min_set(), true)?;
    Ok(Replication {
        counts,
        truth,
        p_unadjusted: p_star,
        p_max_adjusted: max_adjusted_from_grid(&max_grid),
        p_min_adjusted: min_adjusted_from_grid(&min_grid, p_star),
        p_truth: true_oracle_p(&counts, &truth.theta)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MethodTally {
    /// Non-responders declared responders.
    pub false_calls: usize,
    /// Responders declared responders.
    pub true_calls: usize,
    /// Replications where the p-value was undefined.
    pub undefined_null: usize,
    pub undefined_responder: usize,
}

impl MethodTally {
    fn record(&mut self, p: Option<f64>, responder: bool, alpha: f64) {
        match (p, responder) {
            (None, false) => self.undefined_null += 1,
            (None, true) => self.undefined_responder += 1,
            (Some(p), false) if p <= alpha => self.false_calls += 1,
            (Some(p), true) if p <= alpha => self.true_calls += 1,
            _ => {}
        }
    }

    fn undefined(&self) -> usize {
        self.undefined_null + self.undefined_responder
    }
}

/// Rates for one procedure, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodRates {
    /// False calls as a share of all replications with a defined p-value
    /// (the usual reporting convention, where power tops out near
    /// the responder share).
    pub type1: f64,
    pub power: f64,
    /// False calls among non-responders only.
    pub type1_conditional: f64,
    /// True calls among responders only.
    pub power_conditional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: Scenario,
    pub gamma: f64,
    pub n_control: u64,
    pub reps_done: usize,
    pub responders: usize,
    pub non_responders: usize,
    pub unadjusted: MethodTally,
    pub max_adjusted: MethodTally,
    pub min_adjusted: MethodTally,
    pub true_oracle: MethodTally,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl SimulationSummary {
    pub fn rates(&self, tally: &MethodTally) -> MethodRates {
        let defined = self.reps_done - tally.undefined();
        MethodRates {
            type1: percent(tally.false_calls, defined),
            power: percent(tally.true_calls, defined),
            type1_conditional: percent(
                tally.false_calls,
                self.non_responders - tally.undefined_null,
            ),
            power_conditional: percent(
                tally.true_calls,
                self.responders - tally.undefined_responder,
            ),
        }
    }

    pub fn unadjusted_rates(&self) -> MethodRates {
        self.rates(&self.unadjusted)
    }

    pub fn max_adjusted_rates(&self) -> MethodRates {
        self.rates(&self.max_adjusted)
    }

    pub fn min_adjusted_rates(&self) -> MethodRates {
        self.rates(&self.min_adjusted)
    }

    pub fn true_oracle_rates(&self) -> MethodRates {
        self.rates(&self.true_oracle)
    }
}

/// Folds replications, in replication order, into a summary.
pub fn summarize(cfg: &SimulationConfig, reps: &[Replication]) -> SimulationSummary {
    let mut summary = SimulationSummary {
        scenario: cfg.scenario,
        gamma: cfg.gamma,
        n_control: cfg.n_control,
        reps_done: reps.len(),
        responders: 0,
        non_responders: 0,
        unadjusted: MethodTally::default(),
        max_adjusted: MethodTally::default(),
        min_adjusted: MethodTally::default(),
        true_oracle: MethodTally::default(),
    };
    for r in reps {
        let responder = r.truth.responder;
        if responder {
            summary.responders += 1;
        } else {
            summary.non_responders += 1;
        }
        summary
            .unadjusted
            .record(Some(r.p_unadjusted), responder, cfg.alpha);
        summary
            .max_adjusted
            .record(Some(r.p_max_adjusted), responder, cfg.alpha);
        summary
            .min_adjusted
            .record(r.p_min_adjusted, responder, cfg.alpha);
        summary
            .true_oracle
            .record(Some(r.p_truth), responder, cfg.alpha);
    }
    summary
}

/// All replications of a cell, computed in parallel.
pub fn run_replications(cfg: &SimulationConfig) -> Result<Vec<Replication>> {
    cfg.validate()?;
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect()
}

/// Runs one cell of the study.
pub fn run_cell(cfg: &SimulationConfig) -> Result<SimulationSummary> {
    run_replications(cfg).map(|reps| summarize(cfg, &reps))
}

/// Single-threaded reference path for [`run_cell`].
pub fn run_cell_serial(cfg: &SimulationConfig) -> Result<SimulationSummary> {
    cfg.validate()?;
    let reps = (0..cfg.reps)
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(cfg, &reps))
}
