//! Exit codes, help text and output formats of the `akf` binary.

use std::path::Path;
use std::process::{Command, Output};

const CORE_FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");

fn akf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akf")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&[&str], &[&str]); 5] = [
        (&["--help"], &["generate", "estimate", "train-attention", "scale-sim"]),
        (
            &["generate", "--help"],
            &["--out", "--truth-out", "--seed", "--spec", "--length", "--tau", "--snr-db", "--rate", "--duration"],
        ),
        (
            &["estimate", "--help"],
            &["--config", "--seed", "--experiment", "--estimators", "--attention-params", "--n-iter", "--output-dir"],
        ),
        (
            &["scale-sim", "--help"],
            &["--config", "--seed", "--experiment", "--estimators", "--attention-params", "--n-iter", "--output-dir"],
        ),
        (
            &["train-attention", "--help"],
            &["--trace", "--out", "--loss-out", "--epochs", "--lr", "--window", "--hidden", "--seed"],
        ),
    ];
    for (args, expected) in cases {
        let out = akf(args);
        assert!(out.status.success(), "{args:?}");
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in expected {
            assert!(text.contains(flag), "{args:?} help lacks {flag}:\n{text}");
        }
    }
}

#[test]
fn missing_argument_is_a_usage_error() {
    let out = akf(&["generate", "counts"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn unknown_estimator_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = akf(&["estimate", "--estimators", "ekf,kalman", "--output-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "data");
    assert!(err["message"].as_str().unwrap().contains("kalman"));
}

#[test]
fn unknown_config_key_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"seed": 1, "n_iters": 3}"#).unwrap();
    let out = akf(&["scale-sim", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "data");
}

#[test]
fn counts_generator_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("counts.csv");
    let out = akf(&["generate", "counts", "--length", "120", "--seed", "42", "--out", path(&out_csv)]);
    assert!(out.status.success());
    let golden = std::fs::read(format!("{CORE_FIXTURES}/counts_len120_seed42.csv")).unwrap();
    assert_eq!(std::fs::read(&out_csv).unwrap(), golden);
}

#[test]
fn constant_trace_trains_to_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("flat.csv");
    let mut csv = String::from("timestamp,value\n");
    for k in 0..40 {
        csv.push_str(&format!("{k},2.5\n"));
    }
    std::fs::write(&trace, csv).unwrap();
    let params = dir.path().join("att.json");
    let out = akf(&["train-attention", "--trace", path(&trace), "--out", path(&params), "--epochs", "5", "--window", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = std::fs::read_to_string(dir.path().join("att.json.loss.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("epoch,loss"));
    let losses: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|l| l.abs() < 1e-20), "{losses:?}");
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&params).unwrap()).unwrap();
    assert_eq!(saved["window"], 4);
}

#[test]
fn light_load_reports_no_event_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        r#"{"estimators": ["passive"], "n_iter": 2, "workload": {"rate_per_s": 10000.0, "duration_s": 0.002}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = akf(&["scale-sim", "--config", path(&cfg), "--output-dir", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("stability.csv")).unwrap();
    assert_eq!(
        csv,
        "estimator,iteration,t_i_us,t_i_requests\npassive,0,no_event,no_event\npassive,1,no_event,no_event\n"
    );
    let sigma: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("sigma.json")).unwrap()).unwrap();
    let row = &sigma["estimators"][0];
    assert!(row["sigma_us2"].is_null());
    assert_eq!(row["no_event_iterations"], serde_json::json!([0, 1]));
}

#[test]
fn written_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("in.json");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"seed": 9, "signal": {{"kind": "loss", "spec": {{"length": 120}}}}, "estimators": ["ekf", "savgol"], "output_dir": {:?}}}"#,
            path(&out_dir)
        ),
    )
    .unwrap();
    assert!(akf(&["estimate", "--config", path(&cfg)]).status.success());
    let first = std::fs::read(out_dir.join("config.json")).unwrap();
    let again = dir.path().join("again.json");
    std::fs::write(&again, &first).unwrap();
    assert!(akf(&["estimate", "--config", path(&again)]).status.success());
    assert_eq!(std::fs::read(out_dir.join("config.json")).unwrap(), first);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["estimators"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["ekf", "savgol"]);
    let steps = std::fs::read_to_string(out_dir.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1 + 2 * 119);
}
