use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sectorcalc_core::io::{read_matrix, write_matrix, write_grid};
use sectorcalc_core::{CMatrix, CVector, GridFunction};

fn sectorcalc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sectorcalc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_diag(dir: &Path, name: &str, d: &[f64]) -> String {
    let path = dir.join(name);
    fs::write(&path, write_matrix(&CMatrix::from_real_diagonal(d))).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn empty_matrix_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.mat");
    fs::write(&path, "").unwrap();
    let o = sectorcalc(&["certify-sector", "--matrix", path.to_str().unwrap(), "--theta", "1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn missing_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_diag(dir.path(), "a.mat", &[1.0]);
    let o = sectorcalc(&["certify-sector", "--matrix", &a]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--theta"));
}

#[test]
fn negative_matrix_is_rejected_by_the_hyperbolic_solver() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_diag(dir.path(), "a.mat", &[-1.0]);
    let g = GridFunction::scalar_times(1.0, 8, 2.0, &CVector::from_real(&[1.0]), |_| 1.0).unwrap();
    let gp = dir.path().join("g.grid");
    fs::write(&gp, write_grid(&g)).unwrap();
    let o = sectorcalc(&["hyperbolic", "--matrix", &a, "--g", gp.to_str().unwrap(), "--c", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("error.kind=RegionViolation"), "{out}");
    assert!(out.contains("status=fail"));
}

#[test]
fn verify_dpg_passes() {
    let o = sectorcalc(&["verify", "--suite", "dpg", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("status=pass"));
}

#[test]
fn frac_power_writes_its_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_diag(dir.path(), "a.mat", &[1.0, 9.0]);
    let out = dir.path().join("out");
    let o = sectorcalc(&["frac-power", "--matrix", &a, "--theta", "0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report, stdout(&o));
    let power = read_matrix(&fs::read_to_string(out.join("power.mat")).unwrap()).unwrap();
    assert!(power.max_abs_diff(&CMatrix::from_real_diagonal(&[1.0, 1.0 / 3.0])) < 1e-8);
}

#[test]
fn config_file_runs_like_flags() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_diag(dir.path(), "a.mat", &[2.0]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# semigroup run\ncommand=semigroup\nmatrix={a}\nw=1,0\n")).unwrap();
    let from_file = sectorcalc(&["--config", cfg.to_str().unwrap()]);
    let from_flags = sectorcalc(&["semigroup", "--matrix", &a, "--w", "1,0"]);
    assert_eq!(from_file.status.code(), Some(0), "{}", stdout(&from_file));
    assert_eq!(stdout(&from_file), stdout(&from_flags));
}
