//! Shared fixtures for the benchmarks.

use responder_core::debias::AssayCounts;

/// Worked-example record; `ctrl_pos1` picks the participant (43, 15 or 2).
pub fn worked_example(ctrl_pos1: u64) -> AssayCounts {
    AssayCounts::new(31, 69_540, 85, 93_562, 8, 93_883, ctrl_pos1, 212_650).expect("valid counts")
}
