//! Study-level pipeline: count tables in, per-participant p-values with
//! FDR decisions out, plus the tabular exports used by the command line.
//!
//! Input schema (header required, exact names):
//! `participant_id,n0,N0,n1,N1,c0,C0,c1,C1`, optionally followed by
//! `control_kind` (`generic` or `negative`) and `marker`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::{analyze_participant, ResponderResult};
use crate::debias::AssayCounts;
use crate::error::{Error, Result};
use crate::fdr::{bh_adjust, FdrDecision};
use crate::interval::IntervalMethod;
use crate::nuisance::{ControlKind, NuisanceGrid, SetConfig};
use crate::sim::SimulationSummary;

pub const REQUIRED_COLUMNS: [&str; 9] = [
    "participant_id",
    "n0",
    "N0",
    "n1",
    "N1",
    "c0",
    "C0",
    "c1",
    "C1",
];

/// Default per-protocol threshold on total cells.
pub const DEFAULT_MIN_TOTAL: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub participant_id: String,
    pub counts: AssayCounts,
    /// Overrides the study-wide control kind when present.
    pub control_kind: Option<ControlKind>,
    pub marker: Option<String>,
}

pub fn load_study(path: impl AsRef<Path>) -> Result<Vec<StudyRecord>> {
    let file = std::fs::File::open(path)?;
    read_study(file)
}

/// Parses a study table. Schema problems are reported with the 1-based line
/// number of the offending row (the header is line 1).
pub fn read_study(input: impl Read) -> Result<Vec<StudyRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 9];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or_else(|| Error::Schema {
            row: 1,
            message: format!("missing column {name:?}"),
        })?;
    }
    let kind_col = column("control_kind");
    let marker_col = column("marker");

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let schema = |message: String| Error::Schema { row: line, message };

        let id = row.get(required[0]).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(schema("empty participant_id".into()));
        }
        let mut values = [0u64; 8];
        for (k, value) in values.iter_mut().enumerate() {
            let name = REQUIRED_COLUMNS[k + 1];
            let raw = row.get(required[k + 1]).unwrap_or_default();
            *value = raw
                .parse()
                .map_err(|_| schema(format!("{name} = {raw:?} is not a non-negative integer")))?;
        }
        let [n0, big_n0, n1, big_n1, c0, big_c0, c1, big_c1] = values;
        let counts = AssayCounts::new(n0, big_n0, n1, big_n1, c0, big_c0, c1, big_c1)
            .map_err(|e| schema(e.to_string()))?;
        let control_kind = match kind_col.and_then(|i| row.get(i)).filter(|s| !s.is_empty()) {
            Some(raw) => Some(raw.parse().map_err(|e: Error| schema(e.to_string()))?),
            None => None,
        };
        let marker = marker_col
            .and_then(|i| row.get(i))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        if !ids.insert(id.clone()) {
            return Err(schema(format!("duplicate participant_id {id:?}")));
        }
        records.push(StudyRecord {
            participant_id: id,
            counts,
            control_kind,
            marker,
        });
    }
    Ok(records)
}

/// Splits records into those with at least `min_total` cells in both primary
/// samples and the rest.
pub fn per_protocol_filter(
    records: Vec<StudyRecord>,
    min_total: u64,
) -> (Vec<StudyRecord>, Vec<StudyRecord>) {
    records
        .into_iter()
        .partition(|r| r.counts.total0.min(r.counts.total1) >= min_total)
}

/// Change from T0 to T1 in the percentage of positive cells after
/// subtracting the control percentage at each timepoint. Not floored, so a
/// control that drops more than the primary sample gives a negative value.
pub fn background_subtracted_magnitude(counts: &AssayCounts) -> f64 {
    let (p0, p1) = counts.primary_props();
    let (c0, c1) = counts.control_props();
    100.0 * ((p1 - c1) - (p0 - c0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    /// Decision level and level of the set behind the minimally adjusted
    /// p-value.
    pub alpha: f64,
    /// Level of the set behind the maximally adjusted p-value.
    pub alpha_prime: f64,
    /// FDR level for Benjamini–Hochberg.
    pub fdr: f64,
    pub min_total: u64,
    /// Used for records without their own `control_kind`.
    pub control_kind: ControlKind,
    pub assume_equal_fn: bool,
    /// Grid template; `alpha` and `control_kind` are set per use.
    pub grid: SetConfig,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            alpha_prime: 0.005,
            fdr: 0.05,
            min_total: DEFAULT_MIN_TOTAL,
            control_kind: ControlKind::Generic,
            assume_equal_fn: true,
            grid: SetConfig::default(),
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_prime.is_nan() || self.alpha_prime >= self.alpha {
            return Err(Error::InvalidConfig(format!(
                "alpha' = {} must be below alpha = {}",
                self.alpha_prime, self.alpha
            )));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "FDR level {} must lie in (0, 1)",
                self.fdr
            )));
        }
        self.grid.clone().with_alpha(self.alpha).validate()?;
        self.grid.clone().with_alpha(self.alpha_prime).validate()
    }

    fn set_configs(&self, kind: ControlKind) -> (SetConfig, SetConfig) {
        let mut base = self.grid.clone();
        base.control_kind = kind;
        (
            base.clone().with_alpha(self.alpha_prime),
            base.with_alpha(self.alpha),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantReport {
    pub participant_id: String,
    pub marker: Option<String>,
    pub control_kind: ControlKind,
    pub counts: AssayCounts,
    pub result: ResponderResult,
    /// Background-subtracted magnitude, percentage points.
    pub magnitude: f64,
    pub bh_unadjusted: FdrDecision,
    pub bh_max_adjusted: FdrDecision,
    /// Absent when the minimally adjusted p-value is undefined; such
    /// participants are left out of that column's BH family.
    pub bh_min_adjusted: Option<FdrDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub participants: Vec<ParticipantReport>,
    /// Ids removed by the per-protocol filter.
    pub excluded: Vec<String>,
    pub responders_unadjusted: usize,
    pub responders_max_adjusted: usize,
    pub responders_min_adjusted: usize,
}

/// Filters, analyzes each participant, and applies BH separately to each
/// p-value column. Output order follows input order.
pub fn analyze_study(records: Vec<StudyRecord>, cfg: &DecisionConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    let (kept, excluded) = per_protocol_filter(records, cfg.min_total);
    if kept.is_empty() {
        return Err(Error::EmptyPerProtocol);
    }
    let results: Vec<(ControlKind, ResponderResult)> = kept
        .par_iter()
        .map(|record| {
            let kind = record.control_kind.unwrap_or(cfg.control_kind);
            let (cfg_max, cfg_min) = cfg.set_configs(kind);
            analyze_participant(&record.counts, &cfg_max, &cfg_min, cfg.assume_equal_fn)
                .map(|r| (kind, r))
        })
        .collect::<Result<_>>()?;

    let unadjusted: Vec<f64> = results.iter().map(|(_, r)| r.p_unadjusted).collect();
    let max_adjusted: Vec<f64> = results.iter().map(|(_, r)| r.p_max_adjusted).collect();
    let defined_min: Vec<(usize, f64)> = results
        .iter()
        .enumerate()
        .filter_map(|(i, (_, r))| r.p_min_adjusted.map(|p| (i, p)))
        .collect();
    let bh_unadjusted = bh_adjust(&unadjusted, cfg.fdr)?;
    let bh_max = bh_adjust(&max_adjusted, cfg.fdr)?;
    let min_values: Vec<f64> = defined_min.iter().map(|&(_, p)| p).collect();
    let mut bh_min: Vec<Option<FdrDecision>> = vec![None; kept.len()];
    for (decision, &(i, _)) in bh_adjust(&min_values, cfg.fdr)?
        .into_iter()
        .zip(&defined_min)
    {
        bh_min[i] = Some(FdrDecision {
            index: i,
            ..decision
        });
    }

    let participants: Vec<ParticipantReport> = kept
        .into_iter()
        .zip(results)
        .zip(bh_unadjusted.into_iter().zip(bh_max).zip(bh_min))
        .map(
            |((record, (kind, result)), ((bh_u, bh_x), bh_n))| ParticipantReport {
                magnitude: background_subtracted_magnitude(&record.counts),
                participant_id: record.participant_id,
                marker: record.marker,
                control_kind: kind,
                counts: record.counts,
                result,
                bh_unadjusted: bh_u,
                bh_max_adjusted: bh_x,
                bh_min_adjusted: bh_n,
            },
        )
        .collect();

    let count = |f: fn(&ParticipantReport) -> bool| participants.iter().filter(|p| f(p)).count();
    Ok(AnalysisReport {
        responders_unadjusted: count(|p| p.bh_unadjusted.rejected),
        responders_max_adjusted: count(|p| p.bh_max_adjusted.rejected),
        responders_min_adjusted: count(|p| p.bh_min_adjusted.is_some_and(|d| d.rejected)),
        excluded: excluded.into_iter().map(|r| r.participant_id).collect(),
        participants,
    })
}

/// One flat row per participant, shared by the JSON and CSV reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub participant_id: String,
    pub marker: Option<String>,
    pub control_kind: ControlKind,
    pub n0: u64,
    #[serde(rename = "N0")]
    pub big_n0: u64,
    pub n1: u64,
    #[serde(rename = "N1")]
    pub big_n1: u64,
    pub c0: u64,
    #[serde(rename = "C0")]
    pub big_c0: u64,
    pub c1: u64,
    #[serde(rename = "C1")]
    pub big_c1: u64,
    pub p_unadjusted: f64,
    pub p_max_adjusted: f64,
    pub p_min_adjusted: Option<f64>,
    pub p_range_low: Option<f64>,
    pub p_range_high: Option<f64>,
    pub unadjusted_in_set: bool,
    pub set_nonempty: bool,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub magnitude_pct: f64,
    pub p_bh_unadjusted: f64,
    pub responder_unadjusted: bool,
    pub p_bh_max_adjusted: f64,
    pub responder_max_adjusted: bool,
    pub p_bh_min_adjusted: Option<f64>,
    pub responder_min_adjusted: bool,
}

impl From<&ParticipantReport> for ReportRow {
    fn from(p: &ParticipantReport) -> Self {
        let c = &p.counts;
        Self {
            participant_id: p.participant_id.clone(),
            marker: p.marker.clone(),
            control_kind: p.control_kind,
            n0: c.pos0,
            big_n0: c.total0,
            n1: c.pos1,
            big_n1: c.total1,
            c0: c.ctrl_pos0,
            big_c0: c.ctrl_total0,
            c1: c.ctrl_pos1,
            big_c1: c.ctrl_total1,
            p_unadjusted: p.result.p_unadjusted,
            p_max_adjusted: p.result.p_max_adjusted,
            p_min_adjusted: p.result.p_min_adjusted,
            p_range_low: p.result.p_range.map(|r| r.0),
            p_range_high: p.result.p_range.map(|r| r.1),
            unadjusted_in_set: p.result.unadjusted_in_set,
            set_nonempty: p.result.set_nonempty,
            alpha: p.result.alpha,
            alpha_prime: p.result.alpha_prime,
            magnitude_pct: p.magnitude,
            p_bh_unadjusted: p.bh_unadjusted.p_bh,
            responder_unadjusted: p.bh_unadjusted.rejected,
            p_bh_max_adjusted: p.bh_max_adjusted.p_bh,
            responder_max_adjusted: p.bh_max_adjusted.rejected,
            p_bh_min_adjusted: p.bh_min_adjusted.map(|d| d.p_bh),
            responder_min_adjusted: p.bh_min_adjusted.is_some_and(|d| d.rejected),
        }
    }
}

impl AnalysisReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.participants.iter().map(ReportRow::from).collect()
    }

    /// JSON array with one object per participant.
    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.rows())?;
        Ok(())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in self.rows() {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub fn read_report_json(input: impl Read) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_reader(input)?)
}

pub fn read_report_csv(input: impl Read) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Writes `fp0,fn0,fp1,fn1,in_set,p_theta`, one row per grid point.
pub fn write_surface_csv(grid: &NuisanceGrid, out: impl Write) -> Result<()> {
    #[derive(Serialize)]
    struct SurfaceRow {
        fp0: f64,
        fn0: f64,
        fp1: f64,
        fn1: f64,
        in_set: u8,
        p_theta: f64,
    }
    let mut writer = csv::Writer::from_writer(out);
    for point in &grid.points {
        writer.serialize(SurfaceRow {
            fp0: point.theta.fp0,
            fn0: point.theta.fn0,
            fp1: point.theta.fp1,
            fn1: point.theta.fn1,
            in_set: point.in_set as u8,
            p_theta: point.p_theta,
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Applies `key=value` overrides (comma separated) to a grid template.
///
/// Keys: `alpha`, `fp_max`, `fn_max`, `grid_fp`, `grid_fn`, `refine`,
/// `delta0`, `control_kind`, `interval` (`wilson` or `clopper-pearson`) and
/// `equal_fn` (`true`/`false`, returned separately).
pub fn parse_grid_spec(spec: &str, mut cfg: SetConfig) -> Result<(SetConfig, bool)> {
    let mut equal_fn = true;
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("grid item {item:?} is not key=value")))?;
        let value = value.trim();
        let bad = || Error::InvalidConfig(format!("bad value for {key}: {value:?}"));
        let float = || value.parse::<f64>().map_err(|_| bad());
        let int = || value.parse::<usize>().map_err(|_| bad());
        match key.trim() {
            "alpha" => cfg.alpha = float()?,
            "fp_max" => cfg.fp_max = Some(float()?),
            "fn_max" => cfg.fn_max = float()?,
            "grid_fp" => cfg.grid_fp = int()?,
            "grid_fn" => cfg.grid_fn = int()?,
            "refine" | "refine_levels" => cfg.refine_levels = value.parse().map_err(|_| bad())?,
            "delta0" => cfg.delta0 = float()?,
            "control_kind" => cfg.control_kind = value.parse()?,
            "interval" => {
                cfg.interval = match value {
                    "wilson" => IntervalMethod::Wilson,
                    "clopper-pearson" => IntervalMethod::ClopperPearson,
                    _ => return Err(bad()),
                }
            }
            "equal_fn" => equal_fn = value.parse().map_err(|_| bad())?,
            other => return Err(Error::InvalidConfig(format!("unknown grid key {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok((cfg, equal_fn))
}

/// Column layout of the simulation table; rates are percentages.
pub const SIMULATION_COLUMNS: [&str; 13] = [
    "scenario",
    "n_control",
    "gamma",
    "reps",
    "unadjusted_type1",
    "unadjusted_power",
    "max_adjusted_type1",
    "max_adjusted_power",
    "min_adjusted_type1",
    "min_adjusted_power",
    "true_type1",
    "true_power",
    "min_adjusted_undefined",
];

/// Writes summaries as rows of the simulation table, header first.
pub fn write_simulation_csv(summaries: &[SimulationSummary], out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(SIMULATION_COLUMNS)?;
    for s in summaries {
        let (u, x, n, t) = (
            s.unadjusted_rates(),
            s.max_adjusted_rates(),
            s.min_adjusted_rates(),
            s.true_oracle_rates(),
        );
        let pct = |v: f64| format!("{v:.1}");
        writer.write_record([
            s.scenario.label().to_string(),
            s.n_control.to_string(),
            s.gamma.to_string(),
            s.reps_done.to_string(),
            pct(u.type1),
            pct(u.power),
            pct(x.type1),
            pct(x.power),
            pct(n.type1),
            pct(n.power),
            pct(t.type1),
            pct(t.power),
            (s.min_adjusted.undefined_null + s.min_adjusted.undefined_responder).to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "participant_id,n0,N0,n1,N1,c0,C0,c1,C1\n";

    fn parse(body: &str) -> Result<Vec<StudyRecord>> {
        read_study(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn reads_well_formed_rows() {
        let records =
            parse("a,1,100,2,100,0,50,0,50\nb,3,100,4,100,1,50,1,50\nc,0,10,0,10,0,10,0,10\n")
                .unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].participant_id, "b");
        assert_eq!(records[1].counts.pos1, 4);
        assert_eq!(records[0].control_kind, None);
    }

    #[test]
    fn optional_columns() {
        let text = "participant_id,n0,N0,n1,N1,c0,C0,c1,C1,control_kind,marker\n\
                    a,1,100,2,100,0,50,0,50,negative,IFNg\n\
                    b,1,100,2,100,0,50,0,50,,\n";
        let records = read_study(text.as_bytes()).unwrap();
        assert_eq!(records[0].control_kind, Some(ControlKind::Negative));
        assert_eq!(records[0].marker.as_deref(), Some("IFNg"));
        assert_eq!(records[1].control_kind, None);
        assert_eq!(records[1].marker, None);
    }

    #[test]
    fn schema_errors_name_the_row() {
        let err = parse("a,1,100,2,100,0,50,0,50\nb,300,100,4,100,1,50,1,50\n").unwrap_err();
        match err {
            Error::Schema { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("n0"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("a,x,100,2,100,0,50,0,50\n"),
            Err(Error::Schema { row: 2, .. })
        ));
        assert!(matches!(
            parse("a,-1,100,2,100,0,50,0,50\n"),
            Err(Error::Schema { .. })
        ));
        assert!(matches!(
            parse("a,1,100,2,100,0,50,0,50\na,1,100,2,100,0,50,0,50\n"),
            Err(Error::Schema { row: 3, .. })
        ));
        let missing = read_study("participant_id,n0,N0,n1,N1,c0,C0,c1\n".as_bytes()).unwrap_err();
        assert!(matches!(missing, Error::Schema { row: 1, ref message } if message.contains("C1")));
    }

    #[test]
    fn filter_threshold() {
        let records = parse("a,1,20000,2,20000,0,50,0,50\nb,1,9999,2,20000,0,50,0,50\nc,1,10000,2,10000,0,50,0,50\n").unwrap();
        let (kept, excluded) = per_protocol_filter(records.clone(), DEFAULT_MIN_TOTAL);
        assert_eq!(kept.len(), 2);
        assert_eq!(excluded[0].participant_id, "b");
        let (kept, excluded) = per_protocol_filter(records.clone(), 0);
        assert_eq!((kept.len(), excluded.len()), (3, 0));
        let (kept, _) = per_protocol_filter(records, 1_000_000);
        assert!(kept.is_empty());
    }

    #[test]
    fn magnitude_examples() {
        let id1 = AssayCounts::new(4, 51_006, 163, 105_179, 13, 102_745, 84, 213_187).unwrap();
        assert_eq!(
            format!("{:.2}", background_subtracted_magnitude(&id1)),
            "0.12"
        );
        let flat = AssayCounts::new(5, 1000, 8, 1000, 10, 2000, 16, 2000).unwrap();
        assert_eq!(background_subtracted_magnitude(&flat), 0.0);
        // control rising faster than the primary sample
        let down = AssayCounts::new(50, 103_686, 96, 120_586, 133, 208_117, 421, 238_717).unwrap();
        assert_eq!(
            format!("{:.2}", background_subtracted_magnitude(&down)),
            "-0.08"
        );
    }

    #[test]
    fn empty_per_protocol_set() {
        let records = parse("a,1,100,2,100,0,50,0,50\n").unwrap();
        let err = analyze_study(records, &DecisionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyPerProtocol));
    }

    #[test]
    fn grid_spec_overrides() {
        let (cfg, equal) = parse_grid_spec(
            "fp_max=0.002, grid_fp=201,fn_max=0,refine=3,equal_fn=false",
            SetConfig::default(),
        )
        .unwrap();
        assert_eq!(cfg.fp_max, Some(0.002));
        assert_eq!(cfg.grid_fp, 201);
        assert_eq!(cfg.fn_max, 0.0);
        assert_eq!(cfg.refine_levels, 3);
        assert!(!equal);
        assert!(parse_grid_spec("bogus=1", SetConfig::default()).is_err());
        assert!(parse_grid_spec("grid_fp=1", SetConfig::default()).is_err());
        assert!(parse_grid_spec("alpha", SetConfig::default()).is_err());
    }
}
