use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tbsite(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tbsite"));
    cmd.args(args).env_remove("TB_OUT").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, r#"{"geometry": {"radius": 3.0, "hessian_pairs": 20}, "seed": 7}"#).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tbsite(&["spectrum", "--config", "/nonexistent/cfg.json", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn malformed_config_and_usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"kT": 0.1, "bogus": 1}}"#).unwrap();
    let out = tbsite(&["spectrum", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tbsite(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(tbsite(&["relax", "--R", "abc"], &[]).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    // margin above the first Fermi pole leaves no admissible contour
    fs::write(&cfg, r#"{"geometry": {"radius": 2.0}, "contour": {"margin": 0.5}}"#).unwrap();
    let out = tbsite(&["locality", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn spectrum_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let names = ["spectrum.csv", "spectrum.json", "run.json"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = tbsite(&["spectrum", "--config", &cfg, "--threads", "1", "--out", out_dir.to_str().unwrap()], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(names.map(|n| fs::read(out_dir.join(n)).unwrap()));
    }
    for (k, name) in names.iter().enumerate() {
        assert!(runs[0][k] == runs[1][k], "{name} differs between runs");
    }
    let a = out_dir;
    let csv = fs::read_to_string(a.join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("# seed=7\n# config={"));
}

#[test]
fn environment_overrides_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let target = dir.path().join("from_env");
    let out = tbsite(
        &["site-energies", "--config", &cfg, "--out", dir.path().join("ignored").to_str().unwrap()],
        &[("TB_OUT", &target)],
    );
    assert!(out.status.success());
    assert!(target.join("site_energies.csv").exists());
    assert!(!dir.path().join("ignored").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("site_energies.csv"));
}

#[test]
fn seed_flag_changes_the_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |seed: &str, sub: &str| {
        let d = dir.path().join(sub);
        let out = tbsite(&["spectrum", "--config", &cfg, "--seed", seed, "--out", d.to_str().unwrap()], &[]);
        assert!(out.status.success());
        fs::read_to_string(d.join("spectrum.csv")).unwrap()
    };
    let a = run("1", "s1");
    let b = run("2", "s2");
    assert!(a.starts_with("# seed=1\n"));
    assert_ne!(a.lines().nth(3), b.lines().nth(3));
}

#[test]
fn relax_writes_displacements() {
    let dir = tempfile::tempdir().unwrap();
    let out = tbsite(&["relax", "--R", "3", "--Rbuf", "2.1", "--out", dir.path().to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("displacement.json")).unwrap()).unwrap();
    assert_eq!(doc["converged"], serde_json::json!(true));
    assert!(!doc["displacements"].as_array().unwrap().is_empty());
}
