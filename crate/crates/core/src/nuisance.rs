//! Confidence sets for the misclassification rates, learned from the paired
//! control samples and represented as an explicit finite grid.
//!
//! Grid points live on an integer lattice at the finest refinement
//! resolution, so refinement rounds merge into the base grid without
//! floating-point near-duplicates and the output order is fixed regardless
//! of how evaluation is scheduled.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{self, AssayCounts, MisclassRates};
use crate::error::{Error, Result};
use crate::interval::{binomial_interval, IntervalMethod};
use crate::normal;

/// What the paired control sample is known to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    /// True positive proportion constant across timepoints.
    #[default]
    Generic,
    /// No true positives at either timepoint.
    Negative,
}

impl std::str::FromStr for ControlKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "generic" => Ok(Self::Generic),
            "negative" => Ok(Self::Negative),
            other => Err(Error::InvalidConfig(format!(
                "unknown control kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetConfig {
    /// The set has nominal coverage `1 - alpha`.
    pub alpha: f64,
    pub control_kind: ControlKind,
    /// Per-timepoint interval used in [`ControlKind::Negative`] mode.
    pub interval: IntervalMethod,
    /// Largest admissible `|fn0 - fn1|`.
    pub delta0: f64,
    /// Upper bound of the false-positive axes; `None` derives it from the
    /// control counts (see [`default_fp_max`]).
    pub fp_max: Option<f64>,
    /// Upper bound of the false-negative axes. Zero pins them at zero.
    pub fn_max: f64,
    pub grid_fp: usize,
    pub grid_fn: usize,
    pub refine_levels: u32,
}

impl Default for SetConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            control_kind: ControlKind::Generic,
            interval: IntervalMethod::Wilson,
            delta0: 0.0,
            fp_max: None,
            fn_max: 0.5,
            grid_fp: 101,
            grid_fn: 21,
            // four halvings put the finest step below a tenth of the coarse one
            refine_levels: 4,
        }
    }
}

impl SetConfig {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Fixes both false-negative rates at zero.
    pub fn pin_false_negatives(mut self) -> Self {
        self.fn_max = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.delta0) {
            return bad(format!("delta0 = {} must lie in [0, 1]", self.delta0));
        }
        if let Some(fp_max) = self.fp_max {
            if !(0.0..=1.0).contains(&fp_max) {
                return bad(format!("fp_max = {fp_max} must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.fn_max) {
            return bad(format!("fn_max = {} must lie in [0, 1]", self.fn_max));
        }
        if self.grid_fp < 2 || self.grid_fn < 2 {
            return bad("grid sizes must be at least 2".into());
        }
        if self.refine_levels > 16 {
            return bad("refine_levels above 16 is not supported".into());
        }
        Ok(())
    }

    pub fn resolved_fp_max(&self, counts: &AssayCounts) -> f64 {
        self.fp_max.unwrap_or_else(|| default_fp_max(counts))
    }
}

/// Data-driven false-positive bound:
/// `min(0.5, 5 · max(c0/C0, c1/C1) + 10 / min(C0, C1))`.
pub fn default_fp_max(counts: &AssayCounts) -> f64 {
    let (p0, p1) = counts.control_props();
    let smallest = counts.ctrl_total0.min(counts.ctrl_total1) as f64;
    (5.0 * p0.max(p1) + 10.0 / smallest).min(0.5)
}

/// Membership test for the confidence set, with the per-record constants
/// precomputed.
#[derive(Debug, Clone)]
pub struct SetTest<'a> {
    counts: &'a AssayCounts,
    delta0: f64,
    rule: Rule,
}

#[derive(Debug, Clone)]
enum Rule {
    Generic { critical: f64 },
    Negative { fp0: (f64, f64), fp1: (f64, f64) },
}

impl<'a> SetTest<'a> {
    pub fn new(counts: &'a AssayCounts, cfg: &SetConfig) -> Self {
        let rule = match cfg.control_kind {
            ControlKind::Generic => Rule::Generic {
                critical: normal::two_sided_critical(cfg.alpha),
            },
            ControlKind::Negative => {
                // Product of two per-timepoint intervals, each at 1 - alpha/2.
                let level = 1.0 - cfg.alpha / 2.0;
                Rule::Negative {
                    fp0: binomial_interval(
                        counts.ctrl_pos0,
                        counts.ctrl_total0,
                        level,
                        cfg.interval,
                    ),
                    fp1: binomial_interval(
                        counts.ctrl_pos1,
                        counts.ctrl_total1,
                        level,
                        cfg.interval,
                    ),
                }
            }
        };
        Self {
            counts,
            delta0: cfg.delta0,
            rule,
        }
    }

    /// Returns the membership flag and the control z statistic.
    fn evaluate(&self, theta: &MisclassRates) -> Result<(bool, f64)> {
        let z = debias::control_z(self.counts, theta)?;
        if (theta.fn0 - theta.fn1).abs() > self.delta0 {
            return Ok((false, z));
        }
        let inside = match self.rule {
            Rule::Generic { critical } => z.abs() <= critical,
            Rule::Negative { fp0, fp1 } => {
                (fp0.0..=fp0.1).contains(&theta.fp0) && (fp1.0..=fp1.1).contains(&theta.fp1)
            }
        };
        Ok((inside, z))
    }

    pub fn contains(&self, theta: &MisclassRates) -> bool {
        matches!(self.evaluate(theta), Ok((true, _)))
    }
}

/// Whether `theta` is compatible with the control counts at level `cfg.alpha`.
pub fn in_confidence_set(counts: &AssayCounts, theta: &MisclassRates, cfg: &SetConfig) -> bool {
    SetTest::new(counts, cfg).contains(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: MisclassRates,
    pub in_set: bool,
    /// Responder p-value under `theta`.
    pub p_theta: f64,
    pub control_z: f64,
    pub responder_z: f64,
}

impl GridPoint {
    /// In the set, and the primary counts give a finite statistic under
    /// `theta`. Only these points contribute to the p-value range.
    pub fn admissible(&self) -> bool {
        self.in_set && self.responder_z.is_finite()
    }
}

/// Finite stand-in for the confidence set and the p-values it induces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceGrid {
    pub points: Vec<GridPoint>,
    /// Configuration with `fp_max` resolved.
    pub config: SetConfig,
    pub assume_equal_fn: bool,
    /// Whether any point passed the membership test.
    pub nonempty: bool,
    pub sup_p: Option<f64>,
    pub inf_p: Option<f64>,
    argmax: Option<usize>,
    argmin: Option<usize>,
}

impl NuisanceGrid {
    /// `(inf_p, sup_p)` over admissible points.
    pub fn p_range(&self) -> Option<(f64, f64)> {
        self.inf_p.zip(self.sup_p)
    }

    pub fn argmax(&self) -> Option<&GridPoint> {
        self.argmax.map(|i| &self.points[i])
    }

    pub fn argmin(&self) -> Option<&GridPoint> {
        self.argmin.map(|i| &self.points[i])
    }

    pub fn admissible(&self) -> impl Iterator<Item = &GridPoint> {
        self.points.iter().filter(|p| p.admissible())
    }

    pub fn in_set_count(&self) -> usize {
        self.points.iter().filter(|p| p.in_set).count()
    }
}

type Key = [u64; 4];

/// One lattice axis. `cells == 0` collapses the axis to the single value 0.
#[derive(Debug, Clone, Copy)]
struct Axis {
    max: f64,
    cells: u64,
}

impl Axis {
    fn new(max: f64, points: usize, scale: u64) -> Self {
        let cells = if max > 0.0 {
            (points as u64 - 1) * scale
        } else {
            0
        };
        Self { max, cells }
    }

    fn value(&self, idx: u64) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            self.max * idx as f64 / self.cells as f64
        }
    }

    /// Base-grid indices.
    fn base(&self, scale: u64) -> Vec<u64> {
        if self.cells == 0 {
            vec![0]
        } else {
            (0..=self.cells).step_by(scale as usize).collect()
        }
    }

    /// Indices within two `step`s of `center`.
    fn around(&self, center: u64, step: u64) -> Vec<u64> {
        if self.cells == 0 {
            return vec![0];
        }
        let mut out: Vec<u64> = (-2i64..=2)
            .filter_map(|k| {
                let idx = center as i64 + k * step as i64;
                (0..=self.cells as i64).contains(&idx).then_some(idx as u64)
            })
            .collect();
        out.dedup();
        out
    }
}

struct Lattice {
    fp: Axis,
    fn_: Axis,
    equal_fn: bool,
    delta0: f64,
}

impl Lattice {
    fn theta(&self, key: &Key) -> MisclassRates {
        MisclassRates {
            fp0: self.fp.value(key[0]),
            fn0: self.fn_.value(key[1]),
            fp1: self.fp.value(key[2]),
            fn1: self.fn_.value(key[3]),
        }
    }

    fn fn_pairs(&self, fn0: &[u64], fn1: &[u64]) -> Vec<(u64, u64)> {
        if self.equal_fn {
            // fn1 follows fn0
            return fn0.iter().map(|&k| (k, k)).collect();
        }
        let mut pairs = Vec::new();
        for &a in fn0 {
            for &b in fn1 {
                if (self.fn_.value(a) - self.fn_.value(b)).abs() <= self.delta0 {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    fn product(&self, fp0: &[u64], fp1: &[u64], fn_pairs: &[(u64, u64)]) -> Vec<Key> {
        let mut keys = Vec::with_capacity(fp0.len() * fp1.len() * fn_pairs.len());
        for &a in fp0 {
            for &(f0, f1) in fn_pairs {
                for &b in fp1 {
                    keys.push([a, f0, b, f1]);
                }
            }
        }
        keys
    }
}

/// Enumerates the grid, evaluates membership and the responder p-value at
/// every point, then refines locally around the current extremes of the
/// p-value among admissible points, halving the spacing each round.
///
/// With `assume_equal_fn` the two false-negative rates share one axis;
/// otherwise each has its own axis and pairs further apart than `delta0`
/// are dropped. Rate vectors outside the parameter space (`fp + fn` too
/// close to 1) are skipped.
pub fn build_grid(
    counts: &AssayCounts,
    cfg: &SetConfig,
    assume_equal_fn: bool,
) -> Result<NuisanceGrid> {
    counts.validate()?;
    cfg.validate()?;
    let mut config = cfg.clone();
    config.fp_max = Some(cfg.resolved_fp_max(counts));
    let scale = 1u64 << cfg.refine_levels;
    let lattice = Lattice {
        fp: Axis::new(config.fp_max.unwrap(), cfg.grid_fp, scale),
        fn_: Axis::new(cfg.fn_max, cfg.grid_fn, scale),
        equal_fn: assume_equal_fn,
        delta0: cfg.delta0,
    };
    let test = SetTest::new(counts, &config);

    let fp_base = lattice.fp.base(scale);
    let fn_base = lattice.fn_.base(scale);
    let keys = lattice.product(&fp_base, &fp_base, &lattice.fn_pairs(&fn_base, &fn_base));

    let mut seen: HashSet<Key> = keys.iter().copied().collect();
    let (mut points, mut point_keys) = evaluate_batch(counts, &test, &lattice, keys)?;
    let (mut argmax, mut argmin) = extremes(&points, None, None, 0);

    for level in 1..=cfg.refine_levels {
        let step = scale >> level;
        let mut fresh = Vec::new();
        let mut centers: Vec<usize> = argmax.into_iter().chain(argmin).collect();
        centers.dedup();
        for center in centers {
            let c = point_keys[center];
            let fn_pairs = lattice.fn_pairs(
                &lattice.fn_.around(c[1], step),
                &lattice.fn_.around(c[3], step),
            );
            let local = lattice.product(
                &lattice.fp.around(c[0], step),
                &lattice.fp.around(c[2], step),
                &fn_pairs,
            );
            fresh.extend(local.into_iter().filter(|k| seen.insert(*k)));
        }
        let start = points.len();
        let (new_points, new_keys) = evaluate_batch(counts, &test, &lattice, fresh)?;
        points.extend(new_points);
        point_keys.extend(new_keys);
        (argmax, argmin) = extremes(&points, argmax, argmin, start);
    }

    Ok(NuisanceGrid {
        nonempty: points.iter().any(|p| p.in_set),
        sup_p: argmax.map(|i| points[i].p_theta),
        inf_p: argmin.map(|i| points[i].p_theta),
        points,
        config,
        assume_equal_fn,
        argmax,
        argmin,
    })
}

fn evaluate_batch(
    counts: &AssayCounts,
    test: &SetTest<'_>,
    lattice: &Lattice,
    keys: Vec<Key>,
) -> Result<(Vec<GridPoint>, Vec<Key>)> {
    let evaluated: Vec<Option<(GridPoint, Key)>> = keys
        .into_par_iter()
        .map(|key| {
            let theta = lattice.theta(&key);
            if theta.validate().is_err() {
                return Ok(None);
            }
            let (in_set, control_z) = test.evaluate(&theta)?;
            let responder_z = debias::responder_z(counts, &theta)?;
            let point = GridPoint {
                theta,
                in_set,
                p_theta: normal::upper_tail(responder_z),
                control_z,
                responder_z,
            };
            Ok(Some((point, key)))
        })
        .collect::<Result<_>>()?;
    Ok(evaluated.into_iter().flatten().unzip())
}

/// Updates the argmax/argmin of the p-value over admissible points in
/// `points[start..]`. Ties keep the earlier point.
fn extremes(
    points: &[GridPoint],
    mut argmax: Option<usize>,
    mut argmin: Option<usize>,
    start: usize,
) -> (Option<usize>, Option<usize>) {
    for (i, point) in points.iter().enumerate().skip(start) {
        if !point.admissible() {
            continue;
        }
        if argmax.is_none_or(|j| point.p_theta > points[j].p_theta) {
            argmax = Some(i);
        }
        if argmin.is_none_or(|j| point.p_theta < points[j].p_theta) {
            argmin = Some(i);
        }
    }
    (argmax, argmin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn participant(ctrl_pos1: u64) -> AssayCounts {
        AssayCounts::new(31, 69_540, 85, 93_562, 8, 93_883, ctrl_pos1, 212_650).unwrap()
    }

    fn pinned(grid: usize) -> SetConfig {
        SetConfig {
            fp_max: Some(0.002),
            grid_fp: grid,
            ..SetConfig::default()
        }
        .pin_false_negatives()
    }

    #[test]
    fn membership_of_zero_rates() {
        let cfg = SetConfig::default();
        assert!(!in_confidence_set(
            &participant(43),
            &MisclassRates::ZERO,
            &cfg
        ));
        assert!(in_confidence_set(
            &participant(15),
            &MisclassRates::ZERO,
            &cfg
        ));
        assert!(!in_confidence_set(
            &participant(2),
            &MisclassRates::ZERO,
            &cfg
        ));
    }

    #[test]
    fn negative_mode_zero_counts_contain_zero() {
        let counts = AssayCounts::new(3, 10_000, 9, 10_000, 0, 5_000, 0, 5_000).unwrap();
        let cfg = SetConfig {
            control_kind: ControlKind::Negative,
            ..SetConfig::default()
        };
        assert!(in_confidence_set(&counts, &MisclassRates::ZERO, &cfg));
        let theta = MisclassRates::new(0.0, 0.2, 0.0, 0.2).unwrap();
        assert!(in_confidence_set(&counts, &theta, &cfg));
        // unequal false negatives break the delta0 = 0 constraint
        let theta = MisclassRates::new(0.0, 0.1, 0.0, 0.2).unwrap();
        assert!(!in_confidence_set(&counts, &theta, &cfg));
        // far above the score interval
        let theta = MisclassRates::false_positive(0.01, 0.0).unwrap();
        assert!(!in_confidence_set(&counts, &theta, &cfg));
    }

    #[test]
    fn boundary_is_closed() {
        let counts = participant(43);
        let z = debias::control_z(&counts, &MisclassRates::ZERO).unwrap();
        // alpha whose critical value equals |z| up to rounding
        let alpha = 2.0 * normal::upper_tail(z);
        let crit = normal::two_sided_critical(alpha);
        let cfg = SetConfig::default().with_alpha(alpha);
        assert_eq!(
            in_confidence_set(&counts, &MisclassRates::ZERO, &cfg),
            z.abs() <= crit
        );
    }

    #[test]
    fn default_fp_bound() {
        let counts = participant(43);
        let expected = 5.0 * 43.0 / 212_650.0 + 10.0 / 93_883.0;
        assert!((default_fp_max(&counts) - expected).abs() < 1e-15);
        let heavy = AssayCounts::new(1, 10, 1, 10, 50, 100, 50, 100).unwrap();
        assert_eq!(default_fp_max(&heavy), 0.5);
    }

    #[test]
    fn pinned_grid_shape() {
        let cfg = SetConfig {
            refine_levels: 0,
            ..pinned(11)
        };
        let grid = build_grid(&participant(15), &cfg, true).unwrap();
        assert_eq!(grid.points.len(), 121);
        assert!(grid
            .points
            .iter()
            .all(|p| p.theta.fn0 == 0.0 && p.theta.fn1 == 0.0));
    }

    #[test]
    fn unequal_fn_axes_respect_delta0() {
        let cfg = SetConfig {
            grid_fp: 5,
            grid_fn: 5,
            fn_max: 0.4,
            delta0: 0.1,
            refine_levels: 1,
            ..SetConfig::default()
        };
        let grid = build_grid(&participant(15), &cfg, false).unwrap();
        assert!(grid
            .points
            .iter()
            .all(|p| (p.theta.fn0 - p.theta.fn1).abs() <= 0.1 + 1e-12));
        assert!(grid.points.iter().any(|p| p.theta.fn0 != p.theta.fn1));
    }

    #[test]
    fn refinement_extends_range() {
        let counts = participant(43);
        let coarse = build_grid(
            &counts,
            &SetConfig {
                refine_levels: 0,
                ..pinned(51)
            },
            true,
        )
        .unwrap();
        let fine = build_grid(
            &counts,
            &SetConfig {
                refine_levels: 3,
                ..pinned(51)
            },
            true,
        )
        .unwrap();
        assert!(fine.sup_p.unwrap() >= coarse.sup_p.unwrap());
        assert!(fine.inf_p.unwrap() <= coarse.inf_p.unwrap());
        assert!(fine.points.len() > coarse.points.len());
        // no duplicate lattice points after merging
        let mut seen = HashSet::new();
        for p in &fine.points {
            let key = [p.theta.fp0, p.theta.fn0, p.theta.fp1, p.theta.fn1].map(f64::to_bits);
            assert!(seen.insert(key));
        }
    }

    #[test]
    fn empty_set_is_flagged() {
        // control proportions jump from 0 to 50%: no shared rates explain it
        let counts = AssayCounts::new(10, 1000, 20, 1000, 0, 1000, 500, 1000).unwrap();
        let cfg = SetConfig {
            fp_max: Some(0.01),
            grid_fp: 11,
            grid_fn: 3,
            ..SetConfig::default()
        };
        let grid = build_grid(&counts, &cfg, true).unwrap();
        assert!(!grid.nonempty);
        assert!(grid.p_range().is_none());
    }

    #[test]
    fn deterministic_output() {
        let counts = participant(43);
        let cfg = SetConfig::default();
        let a = build_grid(&counts, &cfg, true).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| build_grid(&counts, &cfg, true).unwrap());
        assert_eq!(a.points, b.points);
        assert_eq!(a.sup_p, b.sup_p);
        assert_eq!(a.inf_p, b.inf_p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn nested_levels_and_idempotent_membership(
            c0 in 0u64..60, c1 in 0u64..60, a1 in 0.01..0.2f64, a2 in 0.2..0.5f64,
        ) {
            let counts = AssayCounts::new(30, 20_000, 60, 20_000, c0, 20_000, c1, 20_000).unwrap();
            let base = SetConfig { grid_fp: 21, grid_fn: 3, refine_levels: 0, ..SetConfig::default() };
            let wide = build_grid(&counts, &base.clone().with_alpha(a1), true).unwrap();
            let narrow = build_grid(&counts, &base.clone().with_alpha(a2), true).unwrap();
            prop_assert_eq!(wide.points.len(), narrow.points.len());
            for (w, n) in wide.points.iter().zip(&narrow.points) {
                prop_assert!(w.in_set || !n.in_set);
                prop_assert_eq!(w.in_set, in_confidence_set(&counts, &w.theta, &wide.config));
                if w.in_set {
                    let crit = normal::two_sided_critical(a1);
                    prop_assert!(w.control_z.abs() <= crit);
                }
            }
        }
    }
}
