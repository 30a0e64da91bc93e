//! Black-box tests of the binary: exit codes, stdout contract, and artifact
//! files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tracecause"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/fig4").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn analyze_fig4_with(dir: &Path, effect: &str, extra: &[&str]) -> Output {
    let report = dir.join("report.json");
    let mut cmd = bin();
    cmd.arg("analyze")
        .arg("--log")
        .arg(fixture("log.csv"))
        .arg("--signature")
        .arg(fixture("signature.json"))
        .args(["--effect", effect, "--cause-vars", "action"])
        .arg("--out")
        .arg(&report);
    cmd.args(extra);
    cmd.output().expect("binary runs")
}

fn analyze_fig4(dir: &Path, extra: &[&str]) -> Output {
    analyze_fig4_with(dir, "pos(n) != 0.6", extra)
}

#[test]
fn analyze_finds_the_worked_example_cause() {
    let dir = tempfile::tempdir().unwrap();
    let out = analyze_fig4(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("cause: action(0) = 1"), "stdout: {text}");
    assert!(text.contains("witness: tau0"), "stdout: {text}");
    assert!(text.contains("counterfactual: tau1"), "stdout: {text}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report_version"], 1);
    assert_eq!(report["cause"], "action(0) = 1");
    assert_eq!(report["witness"], "tau0");
    assert_eq!(report["counterfactual"], "tau1");
    assert_eq!(report["verification"]["ac1"], true);
    assert_eq!(report["verification"]["ac2a"], true);
    assert_eq!(report["verification"]["ac2b"], true);
    assert_eq!(report["partition"]["Z"], serde_json::json!(["action", "pos", "vel"]));
    assert_eq!(report["partition"]["W"], serde_json::json!([]));
    // the human summary and the report agree on the cause string
    assert!(text.contains(report["cause"].as_str().unwrap()));
}

#[test]
fn analyze_rejects_malformed_effect_with_caret() {
    let dir = tempfile::tempdir().unwrap();
    let out = analyze_fig4_with(dir.path(), "pos(n) >", &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("column 8"), "stderr: {err}");
    assert!(err.contains('^'), "stderr: {err}");
}

#[test]
fn analyze_missing_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("analyze")
        .args(["--log", "/nonexistent/log.csv"])
        .arg("--signature")
        .arg(fixture("signature.json"))
        .args(["--effect", "pos(n) != 0.6", "--cause-vars", "action"])
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_reports_no_cause_on_all_success_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = "\
trace_id,step,pos,vel,action,pos0,vel0,g
a,0,0,0.02,1,0,0.02,0.0025
a,1,0.6,0.05,1,0,0.02,0.0025
b,0,0,0.02,-1,0,0.02,0.0025
b,1,0.6,0.06,1,0,0.02,0.0025
";
    let log_path = dir.path().join("log.csv");
    fs::write(&log_path, log).unwrap();
    let out = bin()
        .arg("analyze")
        .arg("--log")
        .arg(&log_path)
        .arg("--signature")
        .arg(fixture("signature.json"))
        .args(["--effect", "pos(n) != 0.6", "--cause-vars", "action"])
        .arg("--out")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("reason: ac1-unsat"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["outcome"], "no-cause");
    assert_eq!(report["reason"], "ac1-unsat");
}

#[test]
fn unknown_flags_are_errors() {
    let out = analyze_fig4(tempfile::tempdir().unwrap().path(), &["--bogus-flag", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn boolean_flags_accept_explicit_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = analyze_fig4(
        dir.path(),
        &["--same-context", "false", "--equiv-prefix", "true", "--mode", "backend_full"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {} stdout: {}",
        stderr(&out),
        stdout(&out)
    );
    assert!(stdout(&out).contains("cause: action(0) = 1"));
    let out = analyze_fig4(dir.path(), &["--same-context", "maybe"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_writes_deterministic_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = bin()
            .args(["generate", "mountain-car", "--n", "300", "--seed", "7", "--horizon", "100"])
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(res.status.code(), Some(0), "stderr: {}", stderr(&res));
    }
    let log_a = fs::read(out_a.join("log.csv")).unwrap();
    let log_b = fs::read(out_b.join("log.csv")).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(
        fs::read(out_a.join("signature.json")).unwrap(),
        fs::read(out_b.join("signature.json")).unwrap()
    );
    // 300 distinct trace ids
    let text = String::from_utf8(log_a).unwrap();
    let ids: std::collections::BTreeSet<&str> = text
        .lines()
        .skip(2)
        .map(|line| line.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 300);
}

#[test]
fn generate_rejects_zero_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "mountain-car", "--n", "0"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_emits_rows_and_tolerates_timeouts() {
    let dir = tempfile::tempdir().unwrap();
    let gen = bin()
        .args(["generate", "mountain-car", "--n", "120", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(gen.status.code(), Some(0));
    let bench_out = dir.path().join("bench.csv");
    let out = bin()
        .arg("bench")
        .arg("--log")
        .arg(dir.path().join("log.csv"))
        .arg("--signature")
        .arg(dir.path().join("signature.json"))
        .args(["--effect", "pos(n) != 0.6", "--cause-vars", "action"])
        .args(["--sizes", "60,120", "--modes", "direct_full,direct_abs"])
        .arg("--out")
        .arg(&bench_out)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = fs::read_to_string(&bench_out).unwrap();
    assert_eq!(table.lines().count(), 5, "header + 4 rows: {table}");
    assert!(table.starts_with("size,mode,alpha,wall_ms,refinements,outcome,cause"));

    // 0 ms budget: every cell times out, exit code stays 0
    let out = bin()
        .arg("bench")
        .arg("--log")
        .arg(dir.path().join("log.csv"))
        .arg("--signature")
        .arg(dir.path().join("signature.json"))
        .args(["--effect", "pos(n) != 0.6", "--cause-vars", "action"])
        .args(["--sizes", "120", "--modes", "direct_full", "--timeout-ms", "0"])
        .arg("--out")
        .arg(&bench_out)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("timeout"));
}

#[test]
fn bench_alpha_sweep_emits_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let gen = bin()
        .args(["generate", "mountain-car", "--n", "100", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(gen.status.code(), Some(0));
    let out = bin()
        .arg("bench")
        .arg("--log")
        .arg(dir.path().join("log.csv"))
        .arg("--signature")
        .arg(dir.path().join("signature.json"))
        .args(["--effect", "pos(n) != 0.6", "--cause-vars", "action"])
        .args(["--sizes", "100", "--modes", "direct_abs", "--alphas", "0.01,0.05,0.1"])
        .arg("--out")
        .arg(dir.path().join("bench.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 4, "header + 3 rows: {table}");
    for alpha in ["0.01", "0.05", "0.1"] {
        assert!(table.lines().any(|l| l.contains(&format!("direct_abs,{alpha},"))), "{table}");
    }
}
