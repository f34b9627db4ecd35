//! Metrics, baselines and report files.

pub mod baselines;
pub mod metrics;
mod report;

pub use report::{
    difficulty, evaluate, in_bin, slope, write_box_csv, write_errors_csv, write_metrics_csv, write_report_json,
    write_spread_csv, Association, Difficulty, DifficultyThresholds, EvalConfig, Evaluation, Group, InstanceRecord,
    IsmSummary, Method, MetricsReport, MetricsRow, NetworkEstimate, RankBy, SpreadSummary, BINS,
};
