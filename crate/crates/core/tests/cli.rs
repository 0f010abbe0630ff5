use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use taskalg::persist::load_table;

fn taskalg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskalg"))
        .args(args)
        .env_remove("TASKALG_LIB")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_env(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.display().to_string()
}

#[test]
fn cp_on_the_example_grid() {
    let o = taskalg(&["cp", "--env", "builtin:example"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("C_p = 8\n"), "{}", stdout(&o));

    let o = taskalg(&["cp", "--env", "builtin:example", "--format", "structured"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["c_p"], 8);
    assert_eq!(v["witness"]["steps"], 8);
}

#[test]
fn cp_single_region_and_no_regions() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_env(
        dir.path(),
        "one.json",
        r#"{"schema_version": 1, "width": 3, "height": 3, "propositions": ["A"], "cells": [{"x": 1, "y": 1, "labels": ["A"]}]}"#,
    );
    let o = taskalg(&["cp", "--env", &one]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("C_p = 1\n"));

    let none = write_env(dir.path(), "none.json", r#"{"width": 3, "height": 3, "propositions": ["A"]}"#);
    assert_eq!(code(&taskalg(&["cp", "--env", &none])), 2);

    let broken = write_env(dir.path(), "broken.json", r#"{"width": 0, "height": 3, "propositions": []}"#);
    assert_eq!(code(&taskalg(&["cp", "--env", &broken])), 2);
    assert_eq!(code(&taskalg(&["cp", "--env", "/nonexistent/env.json"])), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&taskalg(&["frobnicate"])), 1);
    assert_eq!(code(&taskalg(&["run", "--env", "builtin:example", "--cp", "0", "--task", "A"])), 1);
    assert_eq!(code(&taskalg(&["--help"])), 0);
}

#[test]
fn train_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.qtab");
    let o = taskalg(&["train", "--env", "builtin:example", "--task", "A", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let stored = load_table(&out).unwrap();
    let mdp = taskalg::mdp::example_env();
    let cfg = taskalg::penalty::PenaltyConfig::new(8);
    let direct = taskalg::planner::value_iterate(
        &mdp,
        &taskalg::penalty::RewardSpec::positive(taskalg::formula::Formula::prop("A"), cfg),
        taskalg::planner::DEFAULT_TOL,
        None,
    )
    .unwrap();
    assert_eq!(stored.table.config, cfg);
    assert_eq!(stored.table.values.len(), direct.values.len());
    assert!(stored.table.values.iter().zip(&direct.values).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn train_without_convergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.qtab");
    let o = taskalg(&["train", "--env", "builtin:example", "--task", "A", "--max-sweeps", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());
}

#[test]
fn train_refuses_to_mix_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib");
    let lib = lib.to_str().unwrap();
    assert_eq!(code(&taskalg(&["train", "--env", "builtin:example", "--task", "basis", "--lib", lib])), 0);
    assert!(Path::new(lib).join("U.qtab").exists());
    let o = taskalg(&["train", "--env", "builtin:example", "--task", "not-A", "--cp", "9", "--lib", lib]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("different penalty configuration"));
}

#[test]
fn compose_reports_missing_tables_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib");
    let lib = lib.to_str().unwrap();
    assert_eq!(code(&taskalg(&["train", "--env", "builtin:example", "--task", "basis", "--lib", lib])), 0);

    let o = taskalg(&["compose", "--env", "builtin:example", "--task", "!A & C", "--lib", lib]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("neg"), "{}", stdout(&o));

    let o = taskalg(&["compose", "--env", "builtin:example", "--task", "!A & C", "--semantics", "prioritized-safety", "--lib", lib]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("not-A"));

    // The same library path through the environment variable.
    let o = Command::new(env!("CARGO_BIN_EXE_taskalg"))
        .args(["compose", "--env", "builtin:example", "--task", "!A & C", "--semantics", "prioritized-safety"])
        .env("TASKALG_LIB", lib)
        .output()
        .unwrap();
    assert_eq!(code(&o), 4);
}

#[test]
fn run_reproduces_both_semantics() {
    let o = taskalg(&["run", "--env", "builtin:example", "--task", "!A & C", "--start", "0,0", "--format", "structured"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["classification"]["class"], "MinimumViolation");
    assert_eq!(v["nonempty_projection"], serde_json::json!([["A"], ["C"]]));

    let o = taskalg(&[
        "run",
        "--env",
        "builtin:example",
        "--task",
        "!A & C",
        "--semantics",
        "prioritized-safety",
        "--start",
        "0,0",
        "--format",
        "structured",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["classification"]["class"], "PrioritizedSafety");
    assert_eq!(v["nonempty_projection"], serde_json::json!([["B"], ["C"]]));
}

#[test]
fn run_flags_chatter_with_exit_five() {
    let o = taskalg(&["run", "--env", "builtin:barrier", "--task", "C & !A & !B", "--semantics", "prioritized-safety", "--format", "structured"]);
    assert_eq!(code(&o), 5);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["chatter"], true);
    assert_eq!(v["terminated"], false);
    assert!(stderr(&o).contains("chatter"));
}

#[test]
fn stored_composed_table_runs_like_the_formula() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib");
    let lib = lib.to_str().unwrap();
    let table = dir.path().join("composed.qtab");
    let table = table.to_str().unwrap();
    assert_eq!(code(&taskalg(&["train", "--env", "builtin:example", "--task", "basis", "--lib", lib])), 0);
    let o = taskalg(&["compose", "--env", "builtin:example", "--task", "(A | B) & !C", "--lib", lib, "--out", table]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    for start in ["0,0", "4,3", "0,3", "3,0"] {
        let direct = taskalg(&["run", "--env", "builtin:example", "--task", "(A | B) & !C", "--lib", lib, "--start", start]);
        let stored = taskalg(&["run", "--env", "builtin:example", "--table", table, "--start", start]);
        assert_eq!(code(&direct), code(&stored));
        assert_eq!(stdout(&direct), stdout(&stored), "from {start}");
    }
}

#[test]
fn rendered_arrows_trace_the_run() {
    let run = taskalg(&["run", "--env", "builtin:example", "--task", "!A & C", "--start", "0,0", "--format", "structured"]);
    let v: Value = serde_json::from_str(&stdout(&run)).unwrap();
    let cells: Vec<(usize, usize)> =
        v["cells"].as_array().unwrap().iter().map(|c| (c[0].as_u64().unwrap() as usize, c[1].as_u64().unwrap() as usize)).collect();

    let o = taskalg(&["render", "--env", "builtin:example", "--task", "!A & C"]);
    assert_eq!(code(&o), 0);
    // Top row first; flip so rows[y][x].
    let mut rows: Vec<Vec<String>> = stdout(&o).lines().map(|l| l.split(' ').map(String::from).collect()).collect();
    rows.reverse();
    let (mut x, mut y) = (0usize, 0usize);
    let mut trace = vec![(x, y)];
    for _ in 0..50 {
        match rows[y][x].as_str() {
            "↑" => y += 1,
            "↓" => y -= 1,
            "←" => x -= 1,
            "→" => x += 1,
            "●" => break,
            g => panic!("unexpected glyph {g}"),
        }
        trace.push((x, y));
    }
    let mut run_cells = cells.clone();
    run_cells.dedup();
    assert_eq!(trace, run_cells);
}

#[test]
fn render_report_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("run.json");
    let report = report.to_str().unwrap();
    let o = taskalg(&["run", "--env", "builtin:example", "--task", "C", "--start", "4,3", "--format", "structured", "--out", report]);
    assert_eq!(code(&o), 0);

    let o = taskalg(&["render", "--env", "builtin:example", "--report", report]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().ends_with('0'));
    assert!(text.contains("path: (4,3)"));

    let o = taskalg(&["render", "--env", "builtin:example", "--report", report, "--format", "svg"]);
    assert!(stdout(&o).starts_with("<svg"));

    let o = taskalg(&["classify", "--env", "builtin:example", "--task", "C", "--report", report, "--format", "structured"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["class"], "Pure");
}

#[test]
fn classify_a_hand_written_run() {
    let o = taskalg(&["classify", "--env", "builtin:example", "--task", "!A & C", "--start", "0,0", "--actions", "r,r,r,u,stay"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("class: MinimumViolation"), "{text}");
    assert!(text.contains("violations: 1"));
}

#[test]
fn oracle_structured_output() {
    let o = taskalg(&["oracle", "--env", "builtin:example", "--task", "!A & C", "--start", "0,0", "--format", "structured"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_version"], 1);
    let r = &v["results"][0];
    assert_eq!(r["feasible"], true);
    assert_eq!(r["min_violations"], 1);

    let o = taskalg(&["oracle", "--env", "builtin:example", "--task", "!A & C", "--semantics", "prioritized-safety", "--start", "0,0"]);
    assert!(stdout(&o).starts_with("(0,0): "), "{}", stdout(&o));
    assert!(!stdout(&o).contains("{A"), "{}", stdout(&o));
}
