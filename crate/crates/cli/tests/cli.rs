use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apeuler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apeuler")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn print_defaults_needs_no_config() {
    let out = apeuler(&["run", "--print-defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("reference_grid = 512"));
    assert!(text.contains("mode = \"compressible\""));
}

#[test]
fn print_config_echoes_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "gamma = 2.0\neps = [0.01]\n");
    let out = apeuler(&["run", "--config", &cfg, "--print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("gamma = 2.0") && text.contains("eps = [0.01]"), "{text}");

    let out = apeuler(&[
        "run", "--config", &cfg, "--print-config", "--grids", "16,32", "--eps", "1,1e-1", "--mode",
        "asymptotic_study", "--workers", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("grids = [16, 32]"));
    assert!(text.contains("eps = [1.0, 0.1]"));
    assert!(text.contains("mode = \"asymptotic_study\""));
    assert!(text.contains("workers = 3"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "viscosity = 0.1\n");
    let out = apeuler(&["run", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("viscosity"));

    let out = apeuler(&["run", "--config", "/no/such/config.toml"]);
    assert_eq!(out.status.code(), Some(1));

    let ok = write(dir.path(), "ok.toml", "");
    let out = apeuler(&["run", "--config", &ok, "--grids", "32,48"]);
    assert_eq!(out.status.code(), Some(1));
    let out = apeuler(&["run"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_succeeds_then_reports_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "grids = [8]\nt_final = 0.002\nrho_hi = 1.5\n");
    let out_dir = dir.path().join("out");
    let out_s = out_dir.display().to_string();

    let out = apeuler(&["run", "--config", &cfg, "--eps", "1e-2", "--out", &out_s]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("runs/comp_k8_eps1e-2/diagnostics.csv").exists());

    let out = apeuler(&["run", "--config", &cfg, "--eps", "1,1e-2", "--out", &out_s]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("comp_k8_eps1e0"));
    assert!(out_dir.join("runs/comp_k8_eps1e0/failed.txt").exists());
    assert!(out_dir.join("runs/comp_k8_eps1e-2/diagnostics.csv").exists());
}
