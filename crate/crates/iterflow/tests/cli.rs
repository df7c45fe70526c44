//! Smoke tests for the command-line binary: exit codes, produced files, and
//! the no-partial-output guarantee on failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iterflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn full_run_writes_all_report_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let scenario = scenario_path("burst.toml");
    let result = run(&[
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--verify-oracle",
    ]);
    assert_eq!(result.status.code(), Some(0));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("mode=greedy"));
    assert!(stdout.contains("mode=iterative"));
    assert!(stdout.contains("delta_cost_pct="));
    assert!(stdout.contains("report file(s) written"));
    assert_eq!(
        listing(&out),
        vec![
            "iterations_greedy.txt",
            "iterations_iterative.txt",
            "oracle.txt",
            "summary.txt",
            "trace_greedy.txt",
            "trace_iterative.txt",
        ]
    );
    let oracle = fs::read_to_string(out.join("oracle.txt")).unwrap();
    assert!(oracle.contains("on_frontier=true"));
}

#[test]
fn mode_override_limits_the_outputs_to_one_side() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let scenario = scenario_path("burst.toml");
    let result = run(&[
        scenario.to_str().unwrap(),
        "--mode",
        "greedy",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    assert_eq!(
        listing(&out),
        vec!["iterations_greedy.txt", "summary.txt", "trace_greedy.txt"]
    );
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("mode=greedy"));
    assert!(!summary.contains("mode=iterative"));
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let absent = tmp.path().join("absent.toml");
    let result = run(&[absent.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
    assert!(!out.exists(), "a failed run must not create output files");
}

#[test]
fn unparsable_scenario_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.toml");
    fs::write(&path, "workflow = [1, 2\n").unwrap();
    let out = tmp.path().join("out");
    let result = run(&[path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_workflow_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("scenario.toml");
    fs::write(&path, "workflow = \"nowhere.wf\"\n").unwrap();
    let out = tmp.path().join("out");
    let result = run(&[path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn semantic_scenario_problems_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("scenario.toml");
    fs::write(&path, "workflow = \"dengue\"\niterations = 9\n").unwrap();
    let out = tmp.path().join("out");
    let result = run(&[path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
    assert!(!out.exists());
}

#[test]
fn noise_without_a_seed_fails_until_one_is_supplied() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("scenario.toml");
    fs::write(
        &path,
        "workflow = \"dengue\"\nmode = \"iterative\"\niterations = 2\n\n\
         [noise]\nkind = \"uniform_factor\"\nlow = 0.9\nhigh = 1.1\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let result = run(&[path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    assert!(!out.exists());

    let result = run(&[
        path.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    assert_eq!(
        listing(&out),
        vec!["iterations_iterative.txt", "summary.txt", "trace_iterative.txt"]
    );
}

#[test]
fn oracle_limits_stop_oversized_workflows_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let scenario = scenario_path("dengue.toml");
    let result = run(&[
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--verify-oracle",
        "--max-tasks",
        "4",
    ]);
    assert_eq!(result.status.code(), Some(3));
    assert!(!out.exists(), "no report files may appear when the oracle refuses");
}

#[test]
fn unknown_flags_are_usage_errors() {
    let scenario = scenario_path("burst.toml");
    let result = run(&[scenario.to_str().unwrap(), "--definitely-not-a-flag"]);
    assert_eq!(result.status.code(), Some(2));
}
