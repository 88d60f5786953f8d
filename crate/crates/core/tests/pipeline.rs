use std::path::PathBuf;

use responder_core::prelude::*;
use responder_core::sim::{draw_instance, replication_rng};
use responder_core::study::{
    parse_grid_spec, read_report_csv, read_report_json, write_surface_csv, ReportRow,
};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn pinned_config() -> DecisionConfig {
    let (grid, equal_fn) = parse_grid_spec("fn_max=0", SetConfig::default()).unwrap();
    DecisionConfig {
        grid,
        assume_equal_fn: equal_fn,
        ..DecisionConfig::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

/// Field-by-field comparison, floats to 12 significant digits.
fn same_row(a: &ReportRow, b: &ReportRow) -> bool {
    a.participant_id == b.participant_id
        && a.marker == b.marker
        && a.control_kind == b.control_kind
        && (
            a.n0, a.big_n0, a.n1, a.big_n1, a.c0, a.big_c0, a.c1, a.big_c1,
        ) == (
            b.n0, b.big_n0, b.n1, b.big_n1, b.c0, b.big_c0, b.c1, b.big_c1,
        )
        && close(a.p_unadjusted, b.p_unadjusted)
        && close(a.p_max_adjusted, b.p_max_adjusted)
        && close_opt(a.p_min_adjusted, b.p_min_adjusted)
        && close_opt(a.p_range_low, b.p_range_low)
        && close_opt(a.p_range_high, b.p_range_high)
        && a.unadjusted_in_set == b.unadjusted_in_set
        && a.set_nonempty == b.set_nonempty
        && close(a.alpha, b.alpha)
        && close(a.alpha_prime, b.alpha_prime)
        && close(a.magnitude_pct, b.magnitude_pct)
        && close(a.p_bh_unadjusted, b.p_bh_unadjusted)
        && a.responder_unadjusted == b.responder_unadjusted
        && close(a.p_bh_max_adjusted, b.p_bh_max_adjusted)
        && a.responder_max_adjusted == b.responder_max_adjusted
        && close_opt(a.p_bh_min_adjusted, b.p_bh_min_adjusted)
        && a.responder_min_adjusted == b.responder_min_adjusted
}

#[test]
fn worked_example_report() {
    let records = load_study(data("worked_example.csv")).unwrap();
    let report = analyze_study(records, &pinned_config()).unwrap();
    let rows = report.rows();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(format!("{:.0e}", row.p_unadjusted), "3e-4");
    }
    let [p1, p2, p3] = [&rows[0], &rows[1], &rows[2]];
    assert!(!p1.unadjusted_in_set && p2.unadjusted_in_set && !p3.unadjusted_in_set);
    assert_eq!(p1.p_min_adjusted, p1.p_range_low);
    assert_eq!(p2.p_min_adjusted, Some(p2.p_unadjusted));
    assert_eq!(p3.p_min_adjusted, p3.p_range_high);
    // A(alpha') is the wider set, so its sup is at least the level-alpha one
    for row in &rows {
        let sup = row.p_range_high.unwrap();
        assert!(
            row.p_max_adjusted >= 0.99 * sup + row.alpha_prime,
            "{}",
            row.participant_id
        );
    }
}

#[test]
fn json_and_csv_round_trip() {
    let records = load_study(data("panel1.csv")).unwrap();
    let report = analyze_study(records, &DecisionConfig::default()).unwrap();
    let rows = report.rows();

    let mut json = Vec::new();
    report.write_json(&mut json).unwrap();
    let back = read_report_json(json.as_slice()).unwrap();
    assert_eq!(back.len(), rows.len());
    assert!(rows.iter().zip(&back).all(|(a, b)| same_row(a, b)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    report
        .write_csv(std::fs::File::create(&path).unwrap())
        .unwrap();
    let back = read_report_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert!(rows.iter().zip(&back).all(|(a, b)| same_row(a, b)));
}

#[test]
fn panel_one_decisions() {
    let records = load_study(data("panel1.csv")).unwrap();
    let report = analyze_study(records, &DecisionConfig::default()).unwrap();
    assert_eq!(report.excluded, vec!["low".to_string()]);
    let rows = report.rows();
    assert_eq!(rows.len(), 5);
    // every participant here is called by the maximally adjusted p-value
    assert!(rows.iter().all(|r| r.responder_max_adjusted));
    assert_eq!(report.responders_max_adjusted, 5);
    // ID2: the primary proportion falls, but the control falls further
    let id2 = &rows[1];
    assert!(id2.p_unadjusted > 0.99);
    assert!(id2.p_max_adjusted < 0.01);
    let magnitudes: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2}", r.magnitude_pct))
        .collect();
    assert_eq!(magnitudes, ["0.12", "0.05", "0.06", "0.25", "0.05"]);
}

#[test]
fn row_order_does_not_matter() {
    let records = load_study(data("panel1.csv")).unwrap();
    let mut reversed = records.clone();
    reversed.reverse();
    let forward = analyze_study(records, &DecisionConfig::default())
        .unwrap()
        .rows();
    let mut backward = analyze_study(reversed, &DecisionConfig::default())
        .unwrap()
        .rows();
    backward.reverse();
    assert!(forward.iter().zip(&backward).all(|(a, b)| same_row(a, b)));
}

#[test]
fn surface_has_one_row_per_point() {
    let records = load_study(data("worked_example.csv")).unwrap();
    let (cfg, equal_fn) = parse_grid_spec(
        "alpha=0.05,fp_max=0.002,grid_fp=201,fn_max=0",
        SetConfig::default(),
    )
    .unwrap();
    let grid = build_grid(&records[0].counts, &cfg, equal_fn).unwrap();
    let mut out = Vec::new();
    write_surface_csv(&grid, &mut out).unwrap();
    let mut reader = csv::Reader::from_reader(out.as_slice());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["fp0", "fn0", "fp1", "fn1", "in_set", "p_theta"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), grid.points.len());
    assert!(rows.len() >= 201 * 201);
    let in_set = rows.iter().filter(|r| &r[4] == "1").count();
    assert_eq!(in_set, grid.in_set_count());
}

#[test]
fn synthetic_cohort_recall_and_precision() {
    // Large responder effects, no batch effect, informative controls.
    let mut sim = SimulationConfig::new(Scenario::I, 10.0, 100_000).unwrap();
    sim.seed = 11;
    let mut truth = Vec::new();
    let records: Vec<StudyRecord> = (0..40)
        .map(|i| {
            let (counts, t) = draw_instance(&sim, &mut replication_rng(sim.seed, i));
            truth.push(t.responder);
            StudyRecord {
                participant_id: format!("S{i:02}"),
                counts,
                control_kind: None,
                marker: None,
            }
        })
        .collect();
    let report = analyze_study(records, &DecisionConfig::default()).unwrap();
    let called: Vec<bool> = report
        .rows()
        .iter()
        .map(|r| r.responder_max_adjusted)
        .collect();
    let true_pos = called
        .iter()
        .zip(&truth)
        .filter(|(c, t)| **c && **t)
        .count();
    let false_pos = called
        .iter()
        .zip(&truth)
        .filter(|(c, t)| **c && !**t)
        .count();
    let responders = truth.iter().filter(|t| **t).count();
    assert!(responders > 10, "{responders}");
    assert_eq!(false_pos, 0);
    assert!(
        true_pos as f64 >= 0.7 * responders as f64,
        "{true_pos}/{responders}"
    );
}
