use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adjoint-seminorm"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn solution(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("solution.json")).unwrap()).unwrap()
}

#[test]
fn solve_linear_decay() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("solve", &config("solve_linear.json"), tmp.path(), &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8(o.stdout).unwrap();
    let value: f64 = stdout
        .split('[')
        .nth(1)
        .and_then(|s| s.split(']').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - (-1f64).exp()).abs() <= 1e-6);
    assert!(stdout.contains("nfe "));
    let sol = solution(tmp.path());
    assert!((sol["terminal_state"][0].as_f64().unwrap() - (-1f64).exp()).abs() <= 1e-6);
    assert!(tmp.path().join("attempts_solve.csv").exists());
}

#[test]
fn zero_field_costs_the_cold_start_minimum() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("solve", &config("solve_zero.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let sol = solution(tmp.path());
    let steps = sol["steps_accepted"].as_u64().unwrap();
    assert_eq!(sol["steps_rejected"].as_u64(), Some(0));
    assert_eq!(sol["nfe"].as_u64().unwrap(), 2 + 6 * steps + 1);
    assert_eq!(sol["terminal_state"][0].as_f64(), Some(1.0));
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("malformed.json", "{\"field\": "),
        (
            "unknown_key.json",
            r#"{"field": {"kind": "linear", "state_dim": 1, "params": [-1.0]}, "bogus": 1}"#,
        ),
        (
            "empty_seeds.json",
            r#"{"field": {"kind": "linear", "state_dim": 1, "params": [-1.0]}, "seeds": []}"#,
        ),
        (
            "bad_dims.json",
            r#"{"field": {"kind": "linear", "state_dim": 2, "params": [-1.0]}}"#,
        ),
    ];
    for (name, text) in cases {
        let cfg = write_config(tmp.path(), name, text);
        for sub in ["solve", "gradcheck", "bench", "train"] {
            let o = run(sub, &cfg, &tmp.path().join("out"), &[]);
            assert_eq!(o.status.code(), Some(2), "{sub} {name}");
        }
    }
    let o = run("solve", &tmp.path().join("missing.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_on_all_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("gradcheck", &config("gradcheck.json"), tmp.path(), &[]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("theta: (no parameters)"));
    assert!(stdout.contains("max relative error"));
    let csv = std::fs::read_to_string(tmp.path().join("gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn corrupted_vjp_fails_gradcheck() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"field": {"kind": "mlp", "state_dim": 2, "hidden": 4, "debug_corrupt_vjp": true},
                   "tolerances": [[1e-8, 1e-10]]}"#;
    let cfg = write_config(tmp.path(), "bad.json", text);
    let o = run("gradcheck", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("[FAIL]"));
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn bench_outputs_are_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"field": {"kind": "mlp", "state_dim": 3, "hidden": 8},
                   "tolerances": [[1e-4, 1e-7], [1e-6, 1e-9]], "seeds": [0, 1, 2]}"#;
    let cfg = write_config(tmp.path(), "bench.json", text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("bench", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(
        run("bench", &cfg, &b, &["--parallel", "4"]).status.code(),
        Some(0)
    );
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert_eq!(fa.len(), 2 + 2 * 2 * 3 * 2);
    assert_eq!(fa, fb);

    let summary = String::from_utf8(
        fa.iter()
            .find(|(n, _)| n == "summary.csv")
            .unwrap()
            .1
            .clone(),
    )
    .unwrap();
    assert!(summary
        .lines()
        .next()
        .unwrap()
        .contains("bwd_nfe_reduction"));
    // Forward passes do not depend on the backward norm.
    let cells =
        String::from_utf8(fa.iter().find(|(n, _)| n == "cells.csv").unwrap().1.clone()).unwrap();
    let fwd: Vec<(String, String)> = cells
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (
                format!("{},{},{}", c[0], c[1], c[3]),
                format!("{},{}", c[6], c[7]),
            )
        })
        .collect();
    for (key, v) in &fwd {
        assert!(fwd.iter().filter(|(k, _)| k == key).all(|(_, w)| w == v));
    }
}

#[test]
fn single_mode_bench_has_no_reduction_column() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"field": {"kind": "linear", "state_dim": 2, "params": [-1, 0.5, -0.5, -1]},
                   "norm_modes": ["default"]}"#;
    let cfg = write_config(tmp.path(), "bench.json", text);
    assert_eq!(run("bench", &cfg, tmp.path(), &[]).status.code(), Some(0));
    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(!summary.contains("reduction"));
    assert_eq!(summary.lines().count(), 1 + 3);
}

#[test]
fn failing_cell_is_marked_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"field": {"kind": "linear", "state_dim": 1, "params": [2000.0]},
                   "tolerances": [[1e-6, 1e-9]], "t_span": [0.0, 1.0], "initial_state": [1.0]}"#;
    let cfg = write_config(tmp.path(), "blowup.json", text);
    let o = run("bench", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    let cells = std::fs::read_to_string(tmp.path().join("cells.csv")).unwrap();
    assert!(cells.contains("failed"));
    assert!(tmp.path().join("summary.csv").exists());
}

#[test]
fn train_with_zero_epochs_reports_initial_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: Value =
        serde_json::from_slice(&std::fs::read(config("train_linear.json")).unwrap()).unwrap();
    cfg["train"]["epochs"] = 0.into();
    let path = write_config(tmp.path(), "train0.json", &cfg.to_string());
    let o = run("train", &path, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .contains("initial loss"));
    for mode in ["default", "seminorm"] {
        let log =
            std::fs::read_to_string(tmp.path().join(format!("train_log_{mode}.csv"))).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
}

#[test]
fn train_needs_a_train_section() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("train", &config("solve_linear.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_changes_the_draw() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"field": {"kind": "mlp", "state_dim": 2, "hidden": 3}, "seeds": [0]}"#;
    let cfg = write_config(tmp.path(), "s.json", text);
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    run("solve", &cfg, &a, &[]);
    run("solve", &cfg, &b, &["--seed-override", "5"]);
    run("solve", &cfg, &c, &["--seed-override", "0"]);
    assert_eq!(solution(&b)["seed"], 5);
    assert_ne!(
        solution(&a)["terminal_state"],
        solution(&b)["terminal_state"]
    );
    assert_eq!(
        std::fs::read(a.join("solution.json")).unwrap(),
        std::fs::read(c.join("solution.json")).unwrap()
    );
}
