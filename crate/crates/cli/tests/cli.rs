use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_habitfbp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn run_dir(o: &Output) -> PathBuf {
    let text = String::from_utf8_lossy(&o.stdout);
    PathBuf::from(text.lines().next().expect("run directory printed").trim())
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn solve_defaults_writes_outputs() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["solve"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = run_dir(&o);
    for f in ["config.json", "header.json", "dual.csv", "policy.csv", "value.svg", "weight.svg", "consumption.svg"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let h: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("header.json")).unwrap()).unwrap();
    let x0 = h["x0"].as_f64().unwrap();
    assert!((x0 - 1.313_133_694).abs() < 1e-6, "x0 = {x0}");
    let policy = fs::read_to_string(dir.join("policy.csv")).unwrap();
    assert!(policy.starts_with("x,v,dv,c_star,pi_star,weight,cw\r\n"));
    assert_eq!(policy.lines().count(), 401);
}

#[test]
fn missing_market_field_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"market": {"r": 0.02, "mu": 0.1, "rho": 1, "delta": 0.3}, "utility": {}, "solver": {}}"#,
    );
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sigma"), "{err}");
}

#[test]
fn invalid_parameter_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"market": {"r": 0.02, "mu": 0.1, "sigma": -0.2, "rho": 1, "delta": 0.3}, "utility": {}, "solver": {}}"#,
    );
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_names_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["limits", "nonsense"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--param", "gamma", "--values", "1"], tmp.path()).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"market": {}, "utility": {}, "solver": {},
            "simulation": {"n_paths": 50, "horizon": 5, "record_every": 10}}"#,
    );
    let c = cfg.to_str().unwrap();
    let a_out = tmp.path().join("a");
    let b_out = tmp.path().join("b");
    for out in [&a_out, &b_out] {
        for cmd in ["solve", "simulate"] {
            let o = run(&[cmd, "--config", c], out);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let a = fs::read_dir(&a_out).unwrap().next().unwrap().unwrap().path();
    let b = fs::read_dir(&b_out).unwrap().next().unwrap().unwrap().path();
    assert_eq!(a.file_name(), b.file_name());
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn single_value_sweep_matches_solve() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["solve"], tmp.path());
    assert!(o.status.success());
    let dir = run_dir(&o);
    let o = run(&["sweep", "--param", "kappa", "--values", "2"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let swept = fs::read(dir.join("sweep-kappa").join("policy-kappa=2.csv")).unwrap();
    assert_eq!(swept, fs::read(dir.join("policy.csv")).unwrap());
}

#[test]
fn validate_passes_on_defaults() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["validate"], tmp.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
    let dir = run_dir(&o);
    assert!(dir.join("validate.json").is_file() && dir.join("fd.csv").is_file());
}

#[test]
fn seed_changes_run_directory() {
    let tmp = TempDir::new().unwrap();
    let a = run_dir(&run(&["solve", "--seed", "1"], tmp.path()));
    let b = run_dir(&run(&["solve", "--seed", "2"], tmp.path()));
    assert_ne!(a, b);
}
