use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn meanfield(dir: &Path, sub: &str, config: &str, sets: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, format!("{config}\nio.dir = {}\n", dir.join("out").display())).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_meanfield"));
    cmd.arg(sub).arg("--config").arg(&cfg);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

fn csv_field(path: &Path, column: &str, row: usize) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == column).unwrap();
    lines.nth(row).unwrap().split(',').nth(idx).unwrap().to_string()
}

const GAUSS: &str = "model.kind = gaussian\nmodel.beta = 2\nmodel.k = 0.5";

#[test]
fn certify_gaussian_reports_exact_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), "certify", GAUSS, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed=0"));
    let report = dir.path().join("out/certify_seed0.csv");
    let c_lip: f64 = csv_field(&report, "c_lip", 0).parse().unwrap();
    assert!((c_lip - 1.0).abs() < 1e-6, "{c_lip}");
}

#[test]
fn strong_interaction_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), "certify", GAUSS, &["model.k=1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let margin: f64 = csv_field(&dir.path().join("out/certify_seed0.csv"), "h_margin", 0).parse().unwrap();
    assert!((margin + 0.5).abs() < 1e-6, "{margin}");
    assert_eq!(csv_field(&dir.path().join("out/certify_seed0.csv"), "c_lip", 0), "");
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), "certify", "", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.kind"));
    let out = meanfield(dir.path(), "certify", "model.kind = gaussian\nmodel.beta = -1", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.beta"));
    let out = meanfield(dir.path(), "certify", GAUSS, &["sim.speed=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.speed"));
    let out = Command::new(env!("CARGO_BIN_EXE_meanfield")).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ledger_echoes_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), "certify", GAUSS, &["sim.seed=7"]);
    assert_eq!(out.status.code(), Some(0));
    let ledger = fs::read_to_string(dir.path().join("out/ledger_certify_seed7.csv")).unwrap();
    assert!(ledger.contains("# default sim.dt = 0.001"));
    assert!(ledger.contains("# set sim.seed = 7"));
    assert!(ledger.lines().last().unwrap().ends_with(",7,certified"));
    assert!(dir.path().join("out/certify_seed7.csv").exists());
}

#[test]
fn simulate_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "model.kind = double_well\nmodel.k = 0.1\nsim.n = 40\nsim.t_end = 0.2\nio.stride = 50\nexperiment.mu0 = gaussian:1";
    let read = |sets: &[&str]| {
        let out = meanfield(dir.path(), "simulate", cfg, sets);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join("out/simulate_seed0.csv")).unwrap()
    };
    let one = read(&[]);
    assert_eq!(one, read(&["sim.workers=8"]));
    assert_eq!(one, read(&[]));
    let text = String::from_utf8(one).unwrap();
    assert!(text.starts_with("t,particle,coord0\n"));
    assert_eq!(text.lines().count(), 1 + 5 * 40);
}

#[test]
fn contraction_recovers_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "model.kind = gaussian\nmodel.beta = 2\nmodel.k = 0.25\nsim.t_end = 2";
    let out = meanfield(dir.path(), "contraction", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rate: f64 = csv_field(&dir.path().join("out/contraction_seed0.csv"), "fitted_rate", 0).parse().unwrap();
    assert!((rate - 1.5).abs() < 0.15, "{rate}");
}

#[test]
fn sharpness_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "model.kind = gaussian\nmodel.beta = 2\nmodel.k = 0.5\nsim.n = 5\nexperiment.x0 = 2\nexperiment.replicas = 400";
    let out = meanfield(dir.path(), "sharpness", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let path = dir.path().join("out/sharpness_seed0.csv");
    let text = fs::read_to_string(&path).unwrap();
    let last = text.lines().last().unwrap();
    let t: f64 = last.split(',').next().unwrap().parse().unwrap();
    assert!((t - 1.0).abs() < 1e-12);
    let bound: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!((bound - 10.0 * (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn sharpness_rejects_other_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = meanfield(dir.path(), "sharpness", "model.kind = curie_weiss", &[]);
    assert_eq!(out.status.code(), Some(1));
}
