//! End-to-end checks of the command-line interface: exit codes, output
//! determinism, and the reference-solution dump.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmpc"))
}

fn repo_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(name)
}

fn tmp_dir(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&p).unwrap();
    p
}

#[test]
fn certify_benchmark_succeeds() {
    let out = bin().arg("certify").arg(repo_file("watertank.cfg")).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("certificate valid: true"), "{text}");
}

#[test]
fn missing_file_is_validation_error() {
    let out = bin().arg("certify").arg("no_such_file.cfg").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_eps_is_validation_error() {
    let dir = tmp_dir("cli_bad_eps");
    let text = std::fs::read_to_string(repo_file("watertank.cfg"))
        .unwrap()
        .replace("eps = 0.02", "eps = 0.1");
    let path = dir.join("bad_eps.cfg");
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("certify").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0.03125"), "message must cite 1/(N*l): {err}");
}

#[test]
fn runtime_infeasibility_is_exit_three() {
    // states far outside the box make the first local problem infeasible
    let dir = tmp_dir("cli_runtime_fail");
    let text = std::fs::read_to_string(repo_file("watertank.cfg"))
        .unwrap()
        .replace("x0 = [-0.2264 -0.3981]", "x0 = [5.0 5.0]");
    let path = dir.join("far_state.cfg");
    std::fs::write(&path, text).unwrap();
    let out = bin()
        .arg("simulate")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--steps")
        .arg("1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_outputs_are_deterministic() {
    let dir = tmp_dir("cli_determinism");
    for sub in ["a", "b"] {
        let out = bin()
            .arg("simulate")
            .arg(repo_file("watertank.cfg"))
            .arg("--out")
            .arg(dir.join(sub))
            .arg("--steps")
            .arg("6")
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["trace.csv", "residuals.csv", "certificate.txt", "fig_inputs.csv", "fig_states.csv"] {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn oracle_prints_reference_solutions() {
    let out = bin().arg("oracle").arg(repo_file("watertank.cfg")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("kind,agent,component,value"));
    assert!(text.contains("lambda_star"));
    assert!(text.contains("u_saddle"));
    assert!(text.contains("u_qp"));
}

#[test]
fn sweep_single_value_matches_benchmark_run() {
    let dir = tmp_dir("cli_single_sweep");
    let out = bin()
        .arg("sweep")
        .arg(repo_file("watertank.cfg"))
        .arg("--param")
        .arg("eps")
        .arg("--values")
        .arg("0.02")
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let sweep_csv = std::fs::read_to_string(dir.join("sweep_eps.csv")).unwrap();

    let sim_dir = dir.join("ref");
    let out = bin()
        .arg("simulate")
        .arg(repo_file("watertank.cfg"))
        .arg("--out")
        .arg(&sim_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let fig = std::fs::read_to_string(sim_dir.join("fig_inputs.csv")).unwrap();

    // the sweep's aligned series equals the benchmark's total_u column
    let mut sweep_vals = Vec::new();
    for line in sweep_csv.lines().skip(1) {
        let Some((t, v)) = line.split_once(',') else { continue };
        if t.parse::<usize>().is_ok() {
            sweep_vals.push(v.parse::<f64>().unwrap());
        }
    }
    let mut fig_vals = Vec::new();
    for line in fig.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        fig_vals.push(cols[cols.len() - 2].parse::<f64>().unwrap());
    }
    assert_eq!(sweep_vals.len(), fig_vals.len());
    for (a, b) in sweep_vals.iter().zip(&fig_vals) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn certify_with_override_reports_invalid() {
    // step sizes far outside the certified region still produce a report
    let out = bin()
        .arg("certify")
        .arg(repo_file("watertank.cfg"))
        .arg("--alpha")
        .arg("0.2")
        .arg("--beta")
        .arg("0.19")
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("step sizes taken from config override"), "{text}");
    assert!(text.contains("certificate valid: false"), "{text}");
}
