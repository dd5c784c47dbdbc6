use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fgd-lab"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn identity_config(d: usize, a: Value, n_steps: u64) -> Value {
    serde_json::json!({
        "spec": { "d": d, "sigma_kind": "identity", "theta_star": vec![0.5; d] },
        "methods": [
            { "method": "forward-gradient", "runs": 3 },
            { "method": "sgd", "runs": 1 }
        ],
        "n_steps": n_steps,
        "a_param": a,
        "base_seed": 5
    })
}

fn dense_config(d: usize) -> Value {
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 2.0 } else { 0.01 }).collect())
        .collect();
    serde_json::json!({
        "spec": { "d": d, "sigma_kind": "dense", "sigma": rows, "theta_star": vec![0.1; d] },
        "methods": [{ "method": "forward-gradient", "runs": 1 }],
        "n_steps": 50,
        "a_param": 3.0,
        "base_seed": 1,
        "checkpoint_count": 10
    })
}

fn csv_body(path: &Path) -> Vec<(u64, String, u64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,method,run_id,mse"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].to_string(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &identity_config(10, "log_d".into(), 2000));
    let out = dir.path().join("out");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_body(&out.join("trajectories.csv"));
    assert!(rows.iter().any(|r| r.1 == "forward-gradient" && r.2 == 2));
    assert!(rows.iter().any(|r| r.1 == "sgd" && r.0 == 2000));
    assert!(rows.iter().all(|r| r.3.is_finite() && r.3 >= 0.0));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["n_steps"], 2000);
    assert!((summary["derived"]["a"].as_f64().unwrap() - 10f64.ln()).abs() < 1e-15);
    assert_eq!(summary["summaries"].as_array().unwrap().len(), 2);
    assert!(stdout(&o).contains("forward-gradient"));
}

#[test]
fn shipped_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["identity_d10.json", "diagonal_d4.json", "dense_d3.json"] {
        let cfg = configs().join(name);
        let out = dir.path().join(name);
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--steps",
            "500",
        ]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let o = run(&[
            "theory",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn log_d_below_eight_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &identity_config(5, "log_d".into(), 100));
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("trajectories.csv").exists());
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"spec": {"d": 2}}"#).unwrap();
    let o = run(&[
        "simulate",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let missing = dir.path().join("nope.json");
    let o = run(&[
        "theory",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oversized_steps_diverge_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &identity_config(10, "log_d".into(), 100_000));
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--step-scale",
        "100",
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverge"));
}

#[test]
fn overrides_replace_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &identity_config(10, "log_d".into(), 2000));
    let out = dir.path().join("out");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--d",
        "12",
        "--steps",
        "300",
        "--runs",
        "2",
        "--a",
        "4",
        "--seed",
        "9",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["config"]["spec"]["d"], 12);
    assert_eq!(s["config"]["n_steps"], 300);
    assert_eq!(s["config"]["base_seed"], 9);
    assert_eq!(s["config"]["a_param"], 4.0);
    assert!(s["config"]["methods"]
        .as_array()
        .unwrap()
        .iter()
        .all(|m| m["runs"] == 2));
}

#[test]
fn dimension_override_needs_identity_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("diagonal_d4.json");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--d",
        "8",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn theory_bound_dominates_exact_at_d10() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &identity_config(10, "log_d".into(), 20_000));
    let out = dir.path().join("out");
    let o = run(&[
        "theory",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_body(&out.join("theory.csv"));
    let exact: Vec<_> = rows.iter().filter(|r| r.1 == "theory-exact").collect();
    let bound: Vec<_> = rows.iter().filter(|r| r.1 == "theory-bound").collect();
    assert_eq!(exact.len(), bound.len());
    assert!(!exact.is_empty());
    for (e, b) in exact.iter().zip(&bound) {
        assert_eq!(e.0, b.0);
        if e.0 > 0 {
            assert!(e.3 <= b.3, "k = {}: {} > {}", e.0, e.3, b.3);
        }
    }
    assert!(stdout(&o).contains("max exact/bound"));
}

#[test]
fn theory_at_d1_matches_scalar_recursion() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = identity_config(1, 3.0.into(), 40);
    v["init_distribution"] = serde_json::json!([2.0]);
    v["checkpoint_count"] = 40.into();
    v["spec"]["theta_star"] = serde_json::json!([0.5]);
    let cfg = write_config(dir.path(), "c.json", &v);
    let out = dir.path().join("out");
    let o = run(&[
        "theory",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_body(&out.join("theory.csv"));
    let exact: Vec<_> = rows.iter().filter(|r| r.1 == "theory-exact").collect();
    // d = 1: s ← (1 − α)²s + 8α²s + 3α², α_k = a / (k + 9a)
    let a = 3.0;
    let mut s: f64 = 1.5 * 1.5;
    let mut k = 0;
    for r in &exact {
        while k < r.0 {
            k += 1;
            let alpha = a / (k as f64 + 9.0 * a);
            s = (1.0 - alpha).powi(2) * s + 8.0 * alpha * alpha * s + 3.0 * alpha * alpha;
        }
        assert!((r.3 - s).abs() <= 1e-12 * s.max(1.0), "k = {k}: {} vs {s}", r.3);
    }
    assert!(exact.iter().any(|r| r.0 == 40));
}

#[test]
fn dense_theory_is_limited_to_64_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.json", &dense_config(64));
    let o = run(&[
        "theory",
        "--config",
        ok.to_str().unwrap(),
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let big = write_config(dir.path(), "big.json", &dense_config(65));
    let o = run(&[
        "theory",
        "--config",
        big.to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_suites_pass_and_ablation_fails() {
    for suite in ["lemma1", "thm3", "thm1"] {
        let o = run(&["verify", "--suite", suite]);
        assert_eq!(code(&o), 0, "{suite}: {}", stdout(&o));
        assert!(stdout(&o).starts_with(&format!("{suite}: PASS")));
    }
    let o = run(&["verify", "--suite", "thm3", "--ablate"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn reproduce_and_plot_produce_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    let o = run(&[
        "reproduce-fig2",
        "--d",
        "10",
        "--steps",
        "20000",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(out.join("figure2.svg")).unwrap();
    assert!(svg.starts_with("<?xml") || svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"trajectory\"").count(), 11);
    assert_eq!(svg.matches("class=\"reference\"").count(), 3);

    let csv = out.join("trajectories.csv");
    let p1 = dir.path().join("p1.svg");
    let p2 = dir.path().join("p2.svg");
    for p in [&p1, &p2] {
        let o = run(&[
            "plot",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            p.to_str().unwrap(),
            "--d",
            "10",
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn reproduce_rejects_other_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce-fig2", "--d", "20", "--out", dir.path().to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}
