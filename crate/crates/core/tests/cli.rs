use std::path::Path;
use std::process::Command;

use vortexflow::io::{read_table, GreenRow, TrajectoryRow};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vortexflow"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
seed = 3
[surface]
kind = "flat_torus"
l1 = 1.0
l2 = 1.0
[grid]
n1 = 64
n2 = 64
[vortices]
positions = [[0.3, 0.5], [0.7, 0.5]]
charges = [1, -1]
[xi]
rule = "nearest"
target = [0.0, 0.0]
[run]
eps = [0.1]
horizon = 0.002
ode_dt = 1e-4
[green]
rows = 5
"#;

#[test]
fn selftest_passes() {
    let out = bin().arg("selftest").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = bin().arg("simulate-ode").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seed = 3", "seed = 3\nbogus = 1"));
    let out = bin().args(["green-table", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn ode_and_pde_runs_write_tables_with_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    for cmd in ["simulate-ode", "simulate-pde", "green-table"] {
        let out = bin().arg(cmd).arg("--config").arg(&cfg).arg("--out").arg(&out_dir).arg("--threads").arg("2").output().unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let (ode, meta): (Vec<TrajectoryRow>, _) = read_table(&out_dir.join("trajectory_ode.csv")).unwrap();
    assert_eq!(meta.provenance.as_deref(), Some("ode"));
    assert!(meta.t_star.is_some());
    assert!(!ode.is_empty());
    let (pde, meta): (Vec<TrajectoryRow>, _) = read_table(&out_dir.join("trajectory_pde_eps0p1.csv")).unwrap();
    assert_eq!(meta.eps, Some(0.1));
    assert!(pde.iter().any(|r| r.charge == 1) && pde.iter().any(|r| r.charge == -1));
    assert!(out_dir.join("diagnostics_eps0p1.meta.json").exists());
    let (green, _): (Vec<GreenRow>, _) = read_table(&out_dir.join("green_table.csv")).unwrap();
    assert_eq!(green.len(), 5);
}
