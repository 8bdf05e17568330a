//! End-to-end exercises of the command-line interface through the built
//! binary: exit codes, artifact files, overrides, validation.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quadmpc"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("quadmpc_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let out = bin()
        .args(["run", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("/nonexistent/config.json"),
        "stderr: {stderr}"
    );
}

#[test]
fn run_writes_all_artifacts() {
    let dir = temp_dir("run");
    let out = bin()
        .args([
            "run",
            "--set",
            "scenario.duration=1.5",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["trace.csv", "metrics.csv", "errors.svg", "inputs.svg"] {
        let path = dir.join(name);
        let meta = std::fs::metadata(&path).unwrap_or_else(|_| panic!("{name} missing"));
        assert!(meta.len() > 0, "{name} is empty");
    }
    // One trace row per plant step plus the header.
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 151);
    assert!(
        trace.starts_with("t,x,y,z,phi,theta,psi,vx,vy,vz,p,q,r,tx,ty,tz,u1,u2,u3,u4,jx,ju,jp,ji")
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn validate_echoes_overrides_and_is_idempotent() {
    let out = bin()
        .args(["validate", "--set", "controller.mode=LQR"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"LQR\""), "dump: {text}");

    // The effective-config dump reloads as a fixed point.
    let dir = temp_dir("validate");
    let cfg_path = dir.join("effective.json");
    std::fs::write(&cfg_path, &text).unwrap();
    let second = bin()
        .args(["validate", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(String::from_utf8(second.stdout).unwrap(), text);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn validate_rejects_bad_bounds_with_key() {
    let out = bin()
        .args(["validate", "--set", "bounds.u_min=[9,9,9,9]"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bounds.u_min"), "stderr: {stderr}");
}

#[test]
fn validate_rejects_bad_dt_ratio() {
    let out = bin()
        .args(["validate", "--set", "horizon.dt=0.033"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_rejects_empty_list() {
    let out = bin().args(["sweep", "--t-o", ""]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulation_abort_exits_3() {
    let dir = temp_dir("abort");
    let out = bin()
        .args([
            "run",
            "--set",
            "scenario.initial_state=[99,0,0,0,0,0,30,0,0,0,0,0]",
            "--set",
            "scenario.duration=2",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sanity sphere"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_rejects_malformed_list() {
    let out = bin().args(["sweep", "--t-o", "1,two,3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("two"), "stderr: {stderr}");
}

#[test]
fn sweep_single_t_o_produces_three_rows() {
    let dir = temp_dir("sweep");
    let out = bin()
        .args([
            "sweep",
            "--t-o",
            "2.4",
            "--set",
            "scenario.duration=1.0",
            "--jobs",
            "2",
            "--seedless",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let sweep = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    // Header plus LQR, MPC, one IMPC row.
    assert_eq!(sweep.lines().count(), 4);
    assert!(sweep.contains("LQR"));
    assert!(sweep.contains("MPC"));
    assert!(sweep.contains("IMPC t_o=2.4"));
    std::fs::remove_dir_all(&dir).ok();
}
