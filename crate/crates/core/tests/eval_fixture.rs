mod common;

use std::process::Command;

use stereoloc::eval::{evaluate, EvalConfig, MetricsReport};
use stereoloc::jsonl;

#[test]
fn fixture_metrics_match_hand_computed_values() {
    let (frames, preds) = common::metric_fixture();
    let ev = evaluate(&frames, &preds, &EvalConfig::default()).unwrap();
    let bad = common::check_fixture_report(&ev.report);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn fixture_is_order_independent() {
    let (frames, mut preds) = common::metric_fixture();
    let a = evaluate(&frames, &preds, &EvalConfig::default()).unwrap();
    preds.reverse();
    let b = evaluate(&frames, &preds, &EvalConfig::default()).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn cli_eval_reproduces_fixture_report() {
    let (frames, preds) = common::metric_fixture();
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("frames.jsonl");
    let pp = dir.path().join("preds.jsonl");
    jsonl::write(&fp, &frames).unwrap();
    jsonl::write(&pp, &preds).unwrap();
    let out = dir.path().join("report");
    let status = Command::new(env!("CARGO_BIN_EXE_stereoloc"))
        .args(["eval", "--frames"])
        .arg(&fp)
        .arg("--predictions")
        .arg(&pp)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(out.join("metrics.json")).unwrap();
    let report: MetricsReport = serde_json::from_str(&text).unwrap();
    let bad = common::check_fixture_report(&report);
    assert!(bad.is_empty(), "{bad:#?}");
    let direct = evaluate(&frames, &preds, &EvalConfig::default()).unwrap();
    assert_eq!(report, direct.report);
    for f in ["metrics.csv", "box_plots.csv", "spread_points.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
