use std::fs;
use std::path::Path;
use std::process::Command;

use fluctuant_cli::{presets, ExperimentConfig};

fn fluctuant() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluctuant"))
}

fn small_additive() -> ExperimentConfig {
    let mut cfg = presets::preset("additive-fbm").unwrap();
    cfg.params.n = 8;
    cfg.budget.trajectories = 30;
    cfg
}

fn write(dir: &Path, name: &str, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join(name);
    let text = if name.ends_with(".json") { cfg.to_json() } else { cfg.to_toml() };
    fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_artifacts_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = presets::preset("kv").unwrap();
    cfg.output_dir = tmp.path().join("out");
    let path = write(tmp.path(), "kv.toml", &cfg);
    let out = fluctuant().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["raw.csv", "summary.csv", "verdict.csv", "manifest.json"] {
        assert!(cfg.output_dir.join(f).exists(), "{f}");
    }
    let m = manifest(&cfg.output_dir);
    assert_eq!(m["verdict"], "PASS");
    assert_eq!(m["seed"], cfg.seed);
    let verdicts = fs::read_to_string(cfg.output_dir.join("verdict.csv")).unwrap();
    assert!(verdicts.starts_with("experiment_id,grid_point,lhs,lhs_ci_hi,bound,ratio,fitted_c,verdict\n"));
}

#[test]
fn invalid_density_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = presets::preset("kv").unwrap();
    cfg.params.rho = 1.5;
    let path = write(tmp.path(), "bad.toml", &cfg);
    let out = fluctuant().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.rho"));
}

#[test]
fn unparsable_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "seed = \"x\"\n").unwrap();
    let out = fluctuant().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_verdict_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = presets::preset("kv").unwrap();
    cfg.output_dir = tmp.path().join("out");
    if let fluctuant_cli::Experiment::Kv(kv) = &mut cfg.experiment {
        kv.expected_h_minus_one = Some(0.3);
    }
    let path = write(tmp.path(), "kv.json", &cfg);
    let out = fluctuant().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn identical_runs_hash_identically_for_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for (i, workers) in [1usize, 1, 3].into_iter().enumerate() {
        let mut cfg = small_additive();
        cfg.output_dir = tmp.path().join(format!("run{i}"));
        cfg.budget.workers = Some(workers);
        let path = write(tmp.path(), &format!("c{i}.toml"), &cfg);
        let out = fluctuant().arg("run").arg(&path).output().unwrap();
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
        let m = manifest(&cfg.output_dir);
        hashes.push((m["files"].clone(), fs::read(cfg.output_dir.join("summary.csv")).unwrap()));
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0], hashes[2]);
}

#[test]
fn oracle_prints_csv() {
    let out = fluctuant()
        .args(["oracle", "--kind", "fbm", "--d", "0.5", "--chi", "1", "--times", "1,4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,value");
    let v: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((v - 4.0 / 3.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    let v4: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!((v4 / v - 8.0).abs() < 1e-12);
}

#[test]
fn verify_runs_a_named_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fluctuant()
        .args(["verify", "--experiment", "ensembles", "--output-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS ensembles"));
    assert!(tmp.path().join("ensembles/manifest.json").exists());
}
