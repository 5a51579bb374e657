use std::fs;
use std::process::{Command, Output};

fn geoffpac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoffpac"))
        .args(args)
        .env_remove("GEOFFPAC_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_default_emits_three_blocks() {
    let o = geoffpac(&["analyze"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let blocks = v.as_array().unwrap();
    assert_eq!(blocks.len(), 3);
    let first = &blocks[0];
    assert_eq!(first["gamma_hat"].as_f64(), Some(0.0));
    for c in first["c"].as_array().unwrap() {
        assert!((c.as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn analyze_writes_to_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.json");
    let o = geoffpac(&["analyze", "--gamma-hat", "0.5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
}

#[test]
fn missing_env_file_names_the_path() {
    let o = geoffpac(&["analyze", "--env", "/definitely/missing/env.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/missing/env.json"), "{}", stderr(&o));
}

#[test]
fn zero_step_training_writes_header_and_one_row() {
    let o = geoffpac(&["train", "--steps", "0", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "seed,step,pi_probe,J_pi,J_mu,J_gamma,F1,norm_F2,C_probe");
    assert!(lines[1].starts_with("5,0,0.5,"), "{}", lines[1]);
}

#[test]
fn seed_env_var_is_a_fallback() {
    let o = Command::new(env!("CARGO_BIN_EXE_geoffpac"))
        .args(["train", "--steps", "0"])
        .env("GEOFFPAC_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("11,"));

    let o = Command::new(env!("CARGO_BIN_EXE_geoffpac"))
        .args(["train", "--steps", "0", "--seed", "3"])
        .env("GEOFFPAC_SEED", "11")
        .output()
        .unwrap();
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("3,"));
}

#[test]
fn duplicate_seeds_are_rejected() {
    let o = geoffpac(&["train", "--steps", "10", "--seeds", "1,2,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate seed 1"), "{}", stderr(&o));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seeds": [4, 6], "agent": {"total_steps": 0}}"#).unwrap();
    let o = geoffpac(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seeds: Vec<_> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(seeds, ["4", "6"]);

    let o = geoffpac(&["train", "--config", cfg.to_str().unwrap(), "--seeds", "9"]);
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("9,"));

    fs::write(&cfg, r#"{"agent": {"total_steps": 0, "seed": 12}}"#).unwrap();
    let o = geoffpac(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("12,"));
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"agent": {"gamma_hatt": 0.5}}"#).unwrap();
    let o = geoffpac(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = geoffpac(&["train", "--gamma-hat", "1.0", "--steps", "10"]);
    assert_eq!(o.status.code(), Some(2));

    let o = geoffpac(&["train", "--probe", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_quick_passes() {
    let o = geoffpac(&["verify", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], serde_json::Value::Bool(true));
}

#[test]
fn verify_catches_flipped_term() {
    let o = geoffpac(&["verify", "--quick", "--mutate", "flip-term2"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], serde_json::Value::Bool(false));
    assert!(stderr(&o).contains("FAIL objective.gradient"));
}

#[test]
fn grid_writes_sorted_rows() {
    let o = geoffpac(&[
        "grid",
        "--steps",
        "200",
        "--warmup",
        "50",
        "--grid-gamma-hat",
        "0,0.5",
        "--grid-lambda2",
        "1",
        "--seeds",
        "0,1",
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("gamma_hat,lambda2,seed,"));
    assert!(
        lines[1].starts_with("0,1,0,") || lines[1].starts_with("0.0,1.0,0,"),
        "{}",
        lines[1]
    );
    assert!(stderr(&o).contains("gamma_hat axis"));
}

#[test]
fn env_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.json");
    let o = geoffpac(&["env", "dump", "--env", "random:4:2:3", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = geoffpac(&["analyze", "--env", "random:4:2:3", "--gamma-hat", "0.5"]);
    let second = geoffpac(&["analyze", "--env", path.to_str().unwrap(), "--gamma-hat", "0.5"]);
    assert!(second.status.success(), "{}", stderr(&second));
    let a: serde_json::Value = serde_json::from_str(&stdout(&first)).unwrap();
    let b: serde_json::Value = serde_json::from_str(&stdout(&second)).unwrap();
    assert_close(&a, &b);
}

fn assert_close(a: &serde_json::Value, b: &serde_json::Value) {
    use serde_json::Value::*;
    match (a, b) {
        (Number(x), Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
        (Array(x), Array(y)) => {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).for_each(|(x, y)| assert_close(x, y));
        }
        (Object(x), Object(y)) => {
            assert_eq!(x.len(), y.len());
            for (k, v) in x {
                assert_close(v, &y[k]);
            }
        }
        _ => assert_eq!(a, b),
    }
}
