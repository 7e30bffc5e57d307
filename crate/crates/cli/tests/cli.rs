use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdr_core::linop::{gen_convdiff, write_matrix_market};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gmres-sdr"));
    c.env_remove("GMRES_SDR_OUT");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn write_test_matrix(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cd10.mtx");
    let a = gen_convdiff(10, 5.0).unwrap();
    write_matrix_market(&a, fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn mtx_file_with_ones_rhs_converges() {
    let dir = TempDir::new().unwrap();
    let mtx = write_test_matrix(dir.path());
    let out = dir.path().join("out");
    let o = run(&["mtx-file", "--matrix", mtx.to_str().unwrap(), "--rhs", "ones"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["experiment"], "mtx-file");
    assert_eq!(m["dimension"], 100);
    assert_eq!(m["sketch"], "identity");
    assert_eq!(m["problems"][0]["status"], "converged");
    assert!(m["problems"][0]["final_relative_residual"].as_f64().unwrap() < 1e-6);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("solver,problems,converged,matvecs,inner_products,sketches,iterations,seconds"));
    assert!(metrics.contains("gmres-sdr,1,1,"));
}

#[test]
fn rhs_file_is_read() {
    let dir = TempDir::new().unwrap();
    let mtx = write_test_matrix(dir.path());
    let rhs = dir.path().join("b.txt");
    fs::write(&rhs, (0..100).map(|i| format!("{}\n", i as f64 * 0.01)).collect::<String>()).unwrap();
    let out = dir.path().join("out");
    let o = run(&["mtx-file", "--matrix", mtx.to_str().unwrap(), "--rhs", rhs.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn spec_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = run(&["mtx-file", "--matrix", "/nonexistent/a.mtx"], &out);
    assert_eq!(missing.status.code(), Some(2));
    let bad_k = run(&["convdiff", "--n", "20", "--m", "10", "--k", "10"], &out);
    assert_eq!(bad_k.status.code(), Some(2));
    let bad_flag = run(&["neumann", "--variant", "sideways"], &out);
    assert_eq!(bad_flag.status.code(), Some(2));
    let mtx = write_test_matrix(dir.path());
    let short_rhs = dir.path().join("b.txt");
    fs::write(&short_rhs, "1 2 3").unwrap();
    let o = run(&["mtx-file", "--matrix", mtx.to_str().unwrap(), "--rhs", short_rhs.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_one_and_keeps_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        &[
            "convdiff", "--n", "30", "--alphas", "0,5", "--m", "10", "--k", "2", "--s", "120", "--tol", "1e-8",
            "--restarts", "1",
        ],
        &out,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("manifest.json").exists());
    assert!(out.join("convergence/gmres-sdr-001.csv").exists());
    let m = manifest(&out);
    assert_eq!(m["problems"][1]["status"], "maxrestarts");
}

#[test]
fn neumann_runs_both_solvers_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let args = [
        "neumann", "--grid", "30", "--systems", "3", "--m", "30", "--k", "5", "--s", "350", "--tol", "1e-6",
        "--seed", "3",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&args, &a).status.success());
    assert!(run(&args, &b).status.success());
    let m = manifest(&a);
    assert_eq!(m["solvers"], serde_json::json!(["gmres-sdr", "gmres"]));
    assert_eq!(m["config"]["s"], 350);
    assert_eq!(m["seed"], 3);
    for solver in ["gmres-sdr", "gmres"] {
        for i in 0..3 {
            let rel = format!("convergence/{solver}-{i:03}.csv");
            let (x, y) = (fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap());
            assert_eq!(x, y, "{rel} differs between identical runs");
        }
    }
    let iters = |i: usize| m["problems"][i]["iterations"].as_u64().unwrap();
    assert!(iters(2) < iters(0));
    // the metrics row is the sum of the per-problem reports
    let sdr_mv: u64 = (0..3).map(|i| m["problems"][i]["counters"]["matvecs"].as_u64().unwrap()).sum();
    assert_eq!(m["metrics"][0]["matvecs"].as_u64().unwrap(), sdr_mv);
}

#[test]
fn convergence_csv_schema() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&["neumann", "--grid", "20", "--systems", "1", "--m", "20", "--k", "4", "--s", "200", "--solvers", "sdr"], &out);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("convergence/gmres-sdr-000.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,sres,true_residual"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(!rows.is_empty());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].parse::<usize>().unwrap(), i + 1);
        let mantissa = r[1].split('e').next().unwrap();
        assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17);
    }
    // the last row carries the converged true residual
    assert!(!rows.last().unwrap()[2].is_empty());
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("from-env");
    let o = bin()
        .args(["neumann", "--grid", "20", "--systems", "1", "--m", "20", "--k", "4", "--s", "200", "--solvers", "sdr"])
        .env("GMRES_SDR_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn identity_sketch_trace_has_unit_distortion() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        &["distortion-trace", "--grid", "20", "--m", "20", "--k", "4", "--identity-sketch"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("distortion-000.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,basis_distortion,residual_distortion"));
    let mut residual_rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert!((cols[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        if !cols[2].is_empty() {
            residual_rows += 1;
            assert!((cols[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        }
    }
    assert!(residual_rows >= 1);
}

#[test]
fn sketched_trace_emits_one_row_per_iteration() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&["distortion-trace", "--grid", "40", "--m", "30", "--k", "5", "--s", "300"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let iterations = m["problems"][0]["iterations"].as_u64().unwrap() as usize;
    let text = fs::read_to_string(out.join("distortion-000.csv")).unwrap();
    assert_eq!(text.lines().count(), iterations + 1);
    for line in text.lines().skip(1) {
        let d: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(d > 0.5 && d < 2.0, "distortion {d}");
    }
}

#[test]
fn recycle_space_survives_between_invocations() {
    let dir = TempDir::new().unwrap();
    let space = dir.path().join("space.bin");
    let common = [
        "neumann", "--grid", "30", "--systems", "1", "--m", "30", "--k", "5", "--s", "350", "--solvers", "sdr",
    ];
    let first = dir.path().join("first");
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--save-recycle", space.to_str().unwrap()]);
    assert!(run(&args, &first).status.success());
    assert!(space.exists());

    let second = dir.path().join("second");
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--seed", "1", "--load-recycle", space.to_str().unwrap()]);
    assert!(run(&args, &second).status.success());
    let fresh = dir.path().join("fresh");
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--seed", "1"]);
    assert!(run(&args, &fresh).status.success());
    let iters = |p: &Path| manifest(p)["problems"][0]["iterations"].as_u64().unwrap();
    assert!(iters(&second) < iters(&fresh), "{} vs {}", iters(&second), iters(&fresh));

    let wrong = dir.path().join("wrong");
    let o = run(
        &[
            "neumann", "--grid", "31", "--systems", "1", "--m", "30", "--k", "5", "--s", "350", "--load-recycle",
            space.to_str().unwrap(),
        ],
        &wrong,
    );
    assert_eq!(o.status.code(), Some(2));
}
