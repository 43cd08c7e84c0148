use std::collections::hash_map::DefaultHasher;
use std::fs::{self, File};
use std::hash::{Hash, Hasher};
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use bidomain::cli::MATRIX_FILES;
use bidomain::config::Config;
use bidomain::simulate::Simulation;
use bidomain::sparse::SparseMatrix;

fn bidomain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bidomain")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

fn csr_hash(m: &SparseMatrix) -> u64 {
    let mut h = DefaultHasher::new();
    (m.n_rows(), m.n_cols()).hash(&mut h);
    m.row_offsets().hash(&mut h);
    m.col_indices().hash(&mut h);
    m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>().hash(&mut h);
    h.finish()
}

fn read_mtx(path: &Path) -> SparseMatrix {
    SparseMatrix::read_matrix_market(BufReader::new(File::open(path).unwrap())).unwrap()
}

#[test]
fn verify_passes_on_defaults() {
    let out = bidomain(&["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 24);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"sim": {"t_end": 5}}"#);
    let out = bidomain(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_end"));

    let cfg = write_config(dir.path(), "syntax.json", "{ not json");
    assert_eq!(bidomain(&["verify", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(bidomain(&["verify", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(bidomain(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bidomain(&[]).status.code(), Some(1));
    assert_eq!(bidomain(&["solve", "--inner", "lu"]).status.code(), Some(1));
    assert_eq!(bidomain(&["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"mesh": {"dim": 3, "cells": 6}, "solver": {"tol": 1e-14, "max_iter": 1}}"#);
    let out = bidomain(&["solve", "--config", &cfg, "--inner", "jacobi"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}

#[test]
fn zero_length_simulation_has_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"mesh": {"dim": 3, "cells": 4}, "sim": {"t_end_ms": 0}}"#);
    let out_dir = dir.path().join("out");
    let out = bidomain(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(out_dir.join("activation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 125);
    assert!(rows.iter().all(|r| r.ends_with(',')));
    assert!(!out_dir.join("residuals.csv").exists());
    assert!(fs::read_dir(&out_dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".vtk")));
}

#[test]
fn simulation_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"mesh": {"dim": 2, "cells": 16, "coupled": true}, "sim": {"t_end_ms": 3, "snapshot_every": 30}}"#,
    );
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = bidomain(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--inner", "ic0"]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out_dir.join("snapshot_00030.vtk").exists());
        assert!(out_dir.join("summary.json").exists());
        csvs.push(fs::read_to_string(out_dir.join("activation.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert!(csvs[0].lines().skip(1).any(|r| !r.ends_with(',')));
}

#[test]
fn mesh_file_round_trip_reproduces_matrices() {
    for json in [
        r#"{"mesh": {"dim": 2, "cells": 8, "coupled": true}, "sim": {"t_end_ms": 0}}"#,
        r#"{"mesh": {"dim": 3, "cells": 4}, "sim": {"t_end_ms": 0}}"#,
    ] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "c.json", json);
        let a = dir.path().join("mesh");
        let b = dir.path().join("sim");
        let out = bidomain(&["mesh", "--config", &cfg, "--out", a.to_str().unwrap(), "--matrices"]);
        assert_eq!(out.status.code(), Some(0));
        let mesh_file = a.join("mesh.vtk");
        let out = bidomain(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            b.to_str().unwrap(),
            "--mesh-file",
            mesh_file.to_str().unwrap(),
            "--matrices",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

        let config = Config::from_json(json).unwrap();
        let sim = Simulation::new(config.mesh.build().unwrap(), config.simulation_config().unwrap()).unwrap();
        let sys = sim.system();
        let in_memory = [&sys.s1, &sys.si, &sys.se, &sys.mass, &sys.mass_heart];
        for (name, m) in MATRIX_FILES.iter().zip(in_memory) {
            let expected = csr_hash(m);
            assert_eq!(csr_hash(&read_mtx(&a.join(name))), expected, "{name} from mesh");
            assert_eq!(csr_hash(&read_mtx(&b.join(name))), expected, "{name} from mesh file");
        }
    }
}

#[test]
fn bench_writes_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"bench": {"series": [4, 8], "t_end_ms": 4, "seed": 7}}"#);
    let out_dir = dir.path().join("bench");
    let out = bidomain(&["bench", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let scaling = fs::read_to_string(out_dir.join("scaling.csv")).unwrap();
    let lines: Vec<&str> = scaling.lines().collect();
    assert_eq!(lines[0], "n,dof,iter_avg,cpu_avg_s,r_iter,r_cpu");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",,"));
    assert!(!lines[2].ends_with(','));
    let calib = fs::read_to_string(out_dir.join("calibration.csv")).unwrap();
    assert_eq!(calib.lines().count(), 3);
    for n in [1, 2] {
        let res = fs::read_to_string(out_dir.join(format!("residuals_{n}.csv"))).unwrap();
        assert!(res.starts_with("iter,rel_residual\n0,1e0\n"), "{res}");
    }
}
