//! End-to-end tests of the `sdelab` binary: exit codes, artifacts, and
//! reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_sdelab")
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sdelab-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, contents: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, contents).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn weak_order_run_writes_reports_and_prints_slope() {
    let dir = scratch_dir("weak-order");
    let config = write_config(
        &dir,
        r#"{ "seed": 5, "plan": { "grid_cells": 1024, "oracle_cells": 1024 } }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "weak-order",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let line = stdout(&output);
    assert!(line.contains("slope"), "summary line: {line}");
    for artifact in ["resolved-config.json", "report.json", "report.txt", "errors.csv"] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    // The resolved config echoes the defaults needed to reproduce the run.
    let resolved = fs::read_to_string(out.join("resolved-config.json")).unwrap();
    assert!(resolved.contains("0.025"), "ladder not echoed: {resolved}");
    assert!(resolved.contains("\"seed\": 5"));

    // errors.csv is a header plus one row per ladder point.
    let csv = fs::read_to_string(out.join("errors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("eta,error\n"));
}

#[test]
fn weak_order_runs_are_bit_identical() {
    let dir = scratch_dir("determinism");
    let config = write_config(
        &dir,
        r#"{ "seed": 12, "plan": { "grid_cells": 1024, "oracle_cells": 1024 } }"#,
    );
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let output = run(&[
            "weak-order",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "stderr: {}", stderr(&output));
    }
    let report_a = fs::read(a.join("report.json")).unwrap();
    let report_b = fs::read(b.join("report.json")).unwrap();
    assert_eq!(report_a, report_b, "reports differ between identical runs");
}

#[test]
fn malformed_config_exits_one_and_writes_nothing() {
    let dir = scratch_dir("malformed");
    let config = write_config(&dir, r#"{ "seed": : }"#);
    let out = dir.join("run");
    let output = run(&[
        "weak-order",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("line"), "{}", stderr(&output));
    assert!(!out.exists(), "no output may be written on parse failure");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = scratch_dir("unknown-key");
    let config = write_config(&dir, r#"{ "seed": 3, "plams": {} }"#);
    let out = dir.join("run");
    let output = run(&[
        "weak-order",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("plams"), "{}", stderr(&output));
    assert!(!out.exists());
}

#[test]
fn missing_seed_is_rejected() {
    let dir = scratch_dir("no-seed");
    let config = write_config(&dir, r#"{ "plan": {} }"#);
    let output = run(&["weak-order", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("seed"), "{}", stderr(&output));
}

#[test]
fn subcommand_mismatch_is_rejected() {
    let dir = scratch_dir("mismatch");
    let config = write_config(&dir, r#"{ "seed": 1, "subcommand": "sgd-run" }"#);
    let out = dir.join("run");
    let output = run(&[
        "weak-order",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("sgd-run"), "{}", stderr(&output));
}

#[test]
fn sgd_run_writes_a_trajectory() {
    let dir = scratch_dir("sgd-run");
    let config = write_config(
        &dir,
        r#"{ "seed": 8, "chain": { "eta": 0.05, "n_steps": 50, "start": [0.3] } }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "sgd-run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52, "header plus 51 states");
    assert!(csv.starts_with("t,x0\n"));
}

#[test]
fn pca_run_reports_alignment() {
    let dir = scratch_dir("pca-run");
    let config = write_config(
        &dir,
        r#"{ "seed": 8, "chain": { "eta": 0.05, "n_steps": 2000, "start": [0.1, 0.995] } }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "pca-run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let line = stdout(&output);
    assert!(line.contains("w . v_top"), "{line}");
    // Long Oja runs on this model concentrate near the top eigenvector.
    let alignment: f64 = line
        .rsplit('=')
        .next()
        .unwrap()
        .trim()
        .parse()
        .expect("alignment value");
    assert!(alignment > 0.8, "alignment {alignment}");
}

#[test]
fn seed_override_lands_in_resolved_config() {
    let dir = scratch_dir("seed-override");
    let config = write_config(
        &dir,
        r#"{ "seed": 8, "chain": { "eta": 0.05, "n_steps": 5, "start": [0.3] } }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "sgd-run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "99",
        "--jobs",
        "2",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let resolved = fs::read_to_string(out.join("resolved-config.json")).unwrap();
    assert!(resolved.contains("\"seed\": 99"), "{resolved}");
}

#[test]
fn invariant_suite_passes_inside_hypotheses() {
    let dir = scratch_dir("suite-pass");
    let config = write_config(
        &dir,
        r#"{
            "seed": 4,
            "suite": {
                "eta": 0.1, "test_functions": 3, "applications": 3,
                "grid_cells": 1024, "trajectories": 10, "steps_per_trajectory": 500
            }
        }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "invariant-suite",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let line = stdout(&output);
    assert!(line.contains("0 failures"), "{line}");
    assert!(out.join("suite.json").is_file());
    assert!(out.join("suite.txt").is_file());
}

#[test]
fn invariant_suite_outside_hypotheses_still_exits_zero() {
    let dir = scratch_dir("suite-hypotheses");
    let config = write_config(
        &dir,
        r#"{
            "seed": 4,
            "suite": {
                "eta": 3.0, "test_functions": 2, "applications": 2,
                "grid_cells": 1024, "trajectories": 5, "steps_per_trajectory": 200
            }
        }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "invariant-suite",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "outside-hypotheses runs are not failures; stderr: {}",
        stderr(&output)
    );
    let line = stdout(&output);
    assert!(line.contains("1 outside hypotheses"), "{line}");
    let table = fs::read_to_string(out.join("suite.txt")).unwrap();
    assert!(table.contains("outside hypotheses"), "{table}");
}

#[test]
fn density_push_conserves_mass() {
    let dir = scratch_dir("density");
    let config = write_config(
        &dir,
        r#"{ "seed": 2, "density": { "eta": 0.05, "steps": 5 } }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "density-push",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(out.join("density-initial.csv").is_file());
    assert!(out.join("density-final.csv").is_file());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("density.json")).unwrap()).unwrap();
    let gap = report["mass_gap"].as_f64().unwrap();
    assert!(gap < 1e-8, "mass gap {gap}");
}

#[test]
fn taylor_study_runs() {
    let dir = scratch_dir("taylor");
    let config = write_config(
        &dir,
        r#"{ "seed": 6, "taylor": { "pairs": 3, "eta_top": 0.02, "halvings": 2 } }"#,
    );
    let out = dir.join("run");
    let output = run(&[
        "taylor-study",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("ratios"), "{}", stdout(&output));
    assert!(out.join("taylor.json").is_file());
    assert!(out.join("ratios.csv").is_file());
}
