use std::path::PathBuf;
use std::process::{Command, Output};

fn acmob(args: &[&str], out_dir: &PathBuf) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acmob"))
        .args(args)
        .env("ACMOB_OUTPUT_DIR", out_dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("acmob-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config(dir: &PathBuf, horizon: f64) -> PathBuf {
    let out = acmob(&["preset", "coarsening_2d", "--emit-config"], dir);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout)
        .unwrap()
        .replace("cells = 128", "cells = 16")
        .replace("horizon = 20.0", &format!("horizon = {horizon:?}"));
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_log_and_snapshots() {
    let dir = scratch("run");
    let cfg = small_config(&dir, 1.0);
    let out = acmob(&["run", cfg.to_str().unwrap()], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("steps=10 "));
    let csv = std::fs::read_to_string(dir.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(dir.join("run_final.bin").exists());

    let check = acmob(&["check", dir.join("run.csv").to_str().unwrap()], &dir);
    assert!(check.status.success());
}

#[test]
fn config_errors_exit_with_4() {
    let dir = scratch("badcfg");
    let path = dir.join("bad.toml");
    std::fs::write(&path, "[grid]\ndim = 2\ncells = 8\nlength = 1\nbogus = 1\n").unwrap();
    let out = acmob(&["run", path.to_str().unwrap()], &dir);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let out = acmob(&["preset", "no_such_preset"], &dir);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn check_flags_violations_with_2() {
    let dir = scratch("check");
    let path = dir.join("bad.csv");
    std::fs::write(
        &path,
        "n,t,tau,energy,max_norm,max_val,min_val,solver_iters,solver_residual\n\
         1,0.1,0.1,1.0,0.9,0.9,-0.9,3,1e-12\n\
         2,0.2,0.1,1.5,1.1,1.1,-0.9,3,1e-12\n",
    )
    .unwrap();
    let out = acmob(&["check", path.to_str().unwrap()], &dir);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2 violations"), "{text}");
}

#[test]
fn solver_failure_exits_with_3() {
    let dir = scratch("solver");
    let cfg = small_config(&dir, 0.1);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("max_iter = 500", "max_iter = 1")
        .replace("rel_tol = 0.0000000001", "rel_tol = 1e-15")
        .replace("abs_tol = 0.00000000000001", "abs_tol = 1e-300");
    std::fs::write(&cfg, text).unwrap();
    let out = acmob(&["run", cfg.to_str().unwrap()], &dir);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn converge_prints_table() {
    let dir = scratch("converge");
    let out = acmob(&["converge", "convergence_forced", "--ns", "20,40"], &dir);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].trim_end().ends_with("0.88"), "{text}");
    assert!(dir.join("convergence_forced_N40.csv").exists());
}
