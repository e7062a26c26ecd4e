use std::path::{Path, PathBuf};
use std::process::Command;

use ltstab::cli::cli_main;
use ltstab::scenario::{read_trace, Outcome, SwitchReason, Termination, VerdictReport};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("ltstab").chain(args.iter().copied()))
}

struct Run {
    code: i32,
    verdict: VerdictReport,
    csv: String,
    _dir: tempfile::TempDir,
}

fn run_scenario(stem: &str, extra: &[&str]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let verdict = dir.path().join("verdict.json");
    let case = fixture(&format!("{stem}.json"));
    let schedule = fixture(&format!("{stem}_schedule.json"));
    let mut args = vec![
        "--case",
        case.to_str().unwrap(),
        "--schedule",
        schedule.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--verdict",
        verdict.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let code = run(&args);
    Run {
        code,
        verdict: VerdictReport::from_json(&std::fs::read_to_string(&verdict).unwrap()).unwrap(),
        csv: std::fs::read_to_string(&out).unwrap(),
        _dir: dir,
    }
}

#[test]
fn missing_case_is_a_usage_error() {
    assert_eq!(run(&["--mode", "qss"]), 2);
    assert_eq!(run(&["--case", "/nonexistent/case.json"]), 2);
    assert_eq!(run(&["--case", fixture("smib.json").to_str().unwrap(), "--bogus"]), 2);
    assert_eq!(run(&["--case", fixture("smib.json").to_str().unwrap(), "--dt", "-1"]), 2);
}

#[test]
fn binary_reports_usage_errors_through_its_exit_code() {
    let st = Command::new(env!("CARGO_BIN_EXE_ltstab")).arg("--mode").arg("full").output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_reported() {
    let case = fixture("smib.json");
    let code = run(&["--case", case.to_str().unwrap(), "--t-end", "1", "--mode", "full", "--out", "/nonexistent/dir/t.csv"]);
    assert_eq!(code, 1);
}

#[test]
fn qss_on_the_stable_case() {
    let r = run_scenario("ieee14_stable", &["--mode", "qss"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.verdict.outcome, Outcome::LongTermStable);
    assert_eq!(r.verdict.mode, "qss");
    assert_eq!(r.verdict.termination, Termination::Completed);
}

#[test]
fn hybrid_on_case_two_reports_the_deviation() {
    let r = run_scenario("ieee14_case2", &["--mode", "hybrid", "--eta", "1e-3"]);
    assert_eq!(r.code, 0);
    let v = &r.verdict;
    assert_eq!(v.outcome, Outcome::Unstable);
    assert_eq!(v.switch_backs[0].reason, SwitchReason::OxlDeviation);

    // verdict and trace agree on how the run ended
    let table = read_trace(&r.csv).unwrap();
    let last = table.rows.last().unwrap();
    assert_eq!(last.t, v.t_final);
    assert!(last.event.contains("stop:"), "{}", last.event);
    assert!(table.rows.iter().any(|row| row.event.contains("rollback")));
    let jumps = table.rows.iter().filter(|row| row.event.contains("jump k=")).count();
    assert_eq!(jumps as u32, v.jumps);
}

#[test]
fn trace_has_limiter_and_tap_columns_and_round_trips() {
    let r = run_scenario("ieee14_case1", &["--mode", "full", "--t-end", "60"]);
    assert_eq!(r.code, 0);
    let table = read_trace(&r.csv).unwrap();
    for g in ["G1", "G2", "G3", "G6", "G8"] {
        assert!(table.column(&format!("oxl.{g}.v_oxl")).is_some(), "{g}: {:?}", table.columns);
    }
    assert!(table.columns.iter().any(|c| c.starts_with("ltc.") && c.ends_with(".n")));
    assert_eq!(table.to_csv(), r.csv);
    assert_eq!(r.verdict.termination, Termination::Completed);
    assert!(table.rows.iter().all(|row| !row.event.contains("stop:")));
    assert_eq!(table.rows.last().unwrap().t, r.verdict.t_final);
}

#[test]
fn runs_are_reproducible() {
    let a = run_scenario("smib", &["--mode", "hybrid", "--t-end", "30", "--seed", "1"]);
    let b = run_scenario("smib", &["--mode", "hybrid", "--t-end", "30", "--seed", "2"]);
    assert_eq!(a.csv, b.csv);
    assert_eq!(a.verdict.outcome, Outcome::LongTermStable);
}
