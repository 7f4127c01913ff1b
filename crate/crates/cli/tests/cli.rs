use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use liqsolve_cli::config::RunConfig;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn liqsolve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liqsolve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    liqsolve(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_matches_golden_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("constant.json");
    let out = run_in("solve", &cfg, dir.path(), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let golden = read_json(&configs().join("constant.golden.json"))["y0"]
        .as_f64()
        .unwrap();
    let y0 = read_json(&dir.path().join("solve.json"))["y0"]
        .as_f64()
        .unwrap();
    assert!((y0 - golden).abs() <= 1e-3 * golden, "{y0} vs {golden}");
    let csv = fs::read_to_string(dir.path().join("y.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,a\n"));

    // the golden file is reproduced exactly by the oracle subcommand
    let out = run_in("oracle", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("oracle.json")).unwrap(),
        fs::read(configs().join("constant.golden.json")).unwrap()
    );
}

#[test]
fn liquidate_geometric_passes_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        "liquidate",
        &configs().join("geometric-eta.json"),
        dir.path(),
        &[],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("liquidation.json"));
    assert_eq!(report["pass"], Value::Bool(true));
    assert_eq!(report["verification"]["pass"], Value::Bool(true));
    assert_eq!(report["closed_form"]["pass"], Value::Bool(true));
    assert_eq!(report["terminal_constraint"], Value::Bool(true));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x,inventory,rate,y,eta\n"));
    assert_eq!(csv.lines().count(), 1 + 201);
}

#[test]
fn outputs_are_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("quadratic-risk.json");
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = run_in(
            "liquidate",
            &cfg,
            dir.path(),
            &["--threads", threads, "--seed", "99"],
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in ["trajectory.csv", "liquidation.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quadratic-risk.json");
    let out = run_in("mollify-demo", &cfg, dir.path(), &["--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let resolved = fs::read_to_string(dir.path().join("resolved_config.json")).unwrap();
    let parsed = RunConfig::parse(&resolved).unwrap();
    let mut expected = RunConfig::load(&cfg).unwrap();
    expected.mc.seed = 5;
    expected.output.directory = dir.path().to_path_buf();
    assert_eq!(parsed, expected);
    assert_eq!(parsed.model.theta.0, 2.5);
}

#[test]
fn missing_config_names_the_path() {
    let out = liqsolve(&["solve", "--config", "/no/such/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/config.json"));
}

#[test]
fn usage_errors_exit_64() {
    let out = liqsolve(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(liqsolve(&["solve"]).status.code(), Some(64));
    assert_eq!(liqsolve(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_models_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let base: Value = read_json(&configs().join("constant.json"));
    let cases = [
        ("/model/theta", Value::from("0.5")),
        ("/model/coefficients/eta", Value::from(-1.0)),
        ("/uncertainty/vol_grid", Value::Array(vec![])),
        ("/scheme", serde_json::json!({"kind": "implicit-euler"})),
    ];
    for (pointer, value) in cases {
        let mut cfg = base.clone();
        match cfg.pointer_mut(pointer) {
            Some(slot) => *slot = value,
            None => {
                cfg["scheme"] = value;
            }
        }
        let path = dir.path().join("bad.json");
        fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let out = run_in("solve", &path, &dir.path().join("out"), &[]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{pointer}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn rbsde_and_singular_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in("rbsde", &configs().join("rbsde.json"), dir.path(), &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("rbsde.json"));
    assert!(report["complementarity_residual"].as_f64().unwrap() <= 1e-10);
    let out = run_in(
        "singular",
        &configs().join("constant.json"),
        dir.path(),
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("singular.json"));
    assert_eq!(report["levels_used"].as_array().unwrap().len(), 17);
}
