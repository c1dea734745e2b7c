mod common;

use std::fs;
use std::path::{Path, PathBuf};

use qcpd::io::{read_tensor, write_tensor};
use qcpd::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

use common::{malformed_files, path_str, qcpd, qcpd_ok, read_json, without_timing};

const SCHEMA: &str = include_str!("../schema/report.schema.json");

fn assert_schema_valid(report: &Value) {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "report does not match the schema: {errors:?}\n{report:#}");
}

fn random_kernel(dir: &Path, shape: &[usize], seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let path = dir.join(format!("kernel-{seed}.qtns"));
    write_tensor(&path, &DenseTensor::new(shape.to_vec(), data).unwrap()).unwrap();
    path
}

fn gen(dir: &TempDir, name: &str, args: &[&str]) -> (PathBuf, Value) {
    let path = dir.path().join(name);
    let mut full = vec!["gen", "-o", path_str(&path)];
    full.extend_from_slice(args);
    let out = qcpd_ok(&full);
    (path, serde_json::from_slice(&out.stdout).unwrap())
}

fn run_report(dir: &TempDir, name: &str, args: &[&str]) -> Value {
    let report = dir.path().join(name);
    let mut full = args.to_vec();
    full.extend(["--report", path_str(&report)]);
    qcpd_ok(&full);
    read_json(&report)
}

#[test]
fn every_report_matches_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (input, gen_report) = gen(&dir, "t.qtns", &["--shape", "10x8x9", "--rank", "2", "--noise", "0.01"]);
    assert_schema_valid(&gen_report);
    let input = path_str(&input).to_string();
    let kernel = random_kernel(dir.path(), &[6, 5, 3, 3], 1);
    let pointwise = random_kernel(dir.path(), &[6, 5, 1, 1], 2);
    let jobs: Vec<Vec<&str>> = vec![
        vec!["factorize", "--input", &input, "--rank", "2"],
        vec!["qfactorize", "--input", &input, "--rank", "2", "--bits", "4"],
        vec!["qfactorize", "--input", &input, "--rate", "2", "--height", "4", "--width", "4"],
        vec!["compare", "--input", &input, "--rank", "2", "--bits", "3", "--scheme", "minmax"],
        vec!["compress-conv", "--input", path_str(&kernel), "--rate", "2"],
        vec!["compress-conv", "--input", path_str(&pointwise), "--rate", "1", "--scheme", "minmax", "--asymmetric"],
    ];
    for (i, args) in jobs.iter().enumerate() {
        let report = run_report(&dir, &format!("r{i}.json"), args);
        assert_schema_valid(&report);
    }
}

#[test]
fn on_grid_job_from_generating_factors_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let factors = dir.path().join("truth");
    let (input, g) = gen(
        &dir,
        "grid.qtns",
        &["--shape", "12x10x9", "--rank", "3", "--grid-bits", "4", "--seed", "5", "--factors-out", path_str(&factors)],
    );
    assert_eq!(g["floor"], 0.0);
    let report = run_report(
        &dir,
        "q.json",
        &[
            "qfactorize",
            "--input",
            path_str(&input),
            "--rank",
            "3",
            "--bits",
            "4",
            "--scheme",
            "minmax",
            "--asymmetric",
            "--init-from",
            path_str(&factors),
        ],
    );
    assert!(report["e_quant"].as_f64().unwrap() < 1e-10, "{report:#}");
    assert_eq!(report["init"], "file");
}

#[test]
fn repeated_jobs_match_except_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = gen(&dir, "t.qtns", &["--shape", "9x8x4", "--rank", "2", "--noise", "0.05", "--seed", "3"]);
    let args = ["qfactorize", "--input", path_str(&input), "--rank", "2", "--bits", "3"];
    let a = run_report(&dir, "a.json", &args);
    let b = run_report(&dir, "b.json", &args);
    assert_eq!(without_timing(a), without_timing(b));
}

#[test]
fn gen_with_same_seed_writes_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--shape", "7x6x5", "--rank", "2", "--noise", "0.1", "--seed", "11"];
    let (a, _) = gen(&dir, "a.qtns", &args);
    let (b, _) = gen(&dir, "b.qtns", &args);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn gen_noise_sets_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let (path, g) = gen(&dir, "n.qtns", &["--shape", "16x16x9", "--rank", "4", "--noise", "0.01"]);
    let floor = g["floor"].as_f64().unwrap();
    assert!((floor - 0.01).abs() < 2e-4, "floor {floor}");
    assert_eq!(read_tensor(path).unwrap().shape(), &[16, 16, 9]);
}

#[test]
fn truncated_file_exits_2_naming_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = gen(&dir, "t.qtns", &["--shape", "4x4", "--rank", "1"]);
    let mut bytes = fs::read(&input).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&input, bytes).unwrap();
    let out = qcpd(&["qfactorize", "--input", path_str(&input), "--rank", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("offset 24"), "{msg}");
}

#[test]
fn malformed_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, bytes, fragment) in malformed_files() {
        let path = dir.path().join("bad.qtns");
        fs::write(&path, bytes).unwrap();
        for cmd in ["factorize", "qfactorize", "compare"] {
            let out = qcpd(&[cmd, "--input", path_str(&path), "--rank", "1"]);
            let msg = String::from_utf8_lossy(&out.stderr);
            assert_eq!(out.status.code(), Some(2), "{name} via {cmd}: {msg}");
            assert!(msg.contains(fragment), "{name} via {cmd}: {msg}");
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = gen(&dir, "t.qtns", &["--shape", "5x4x3", "--rank", "1"]);
    let input = path_str(&input);
    let kernel4 = random_kernel(dir.path(), &[4, 4, 3, 3], 1);
    let cases: Vec<Vec<&str>> = vec![
        vec!["compare", "--input", input, "--rank", "2", "--bits", "32"],
        vec!["qfactorize", "--input", input, "--rank", "2", "--bits", "1"],
        vec!["qfactorize", "--input", input, "--rank", "2", "--rate", "2"],
        vec!["qfactorize", "--input", input],
        vec!["qfactorize", "--input", input, "--rank", "0"],
        vec!["qfactorize", "--input", input, "--rank", "2", "--asymmetric"],
        vec!["qfactorize", "--input", input, "--rank", "2", "--eps", "0"],
        vec!["qfactorize", "--input", input, "--rank", "2", "--height", "4"],
        vec!["qfactorize", "--input", input, "--rank", "2", "--height", "4", "--width", "4"],
        vec!["compress-conv", "--input", input],
        vec!["qfactorize", "--input", path_str(&kernel4), "--rank", "2"],
        vec!["gen", "--shape", "4x0", "--rank", "1", "-o", "unused.qtns"],
    ];
    for args in cases {
        let out = qcpd(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn compress_conv_rejects_even_and_non_square_kernels() {
    let dir = tempfile::tempdir().unwrap();
    for shape in [[4usize, 4, 2, 2], [4, 4, 3, 5]] {
        let k = random_kernel(dir.path(), &shape, 9);
        let out = qcpd(&["compress-conv", "--input", path_str(&k)]);
        assert_eq!(out.status.code(), Some(2), "{shape:?}");
    }
}

#[test]
fn compress_conv_selects_rank_134_for_64x64x3x3_at_rate_2() {
    let dir = tempfile::tempdir().unwrap();
    let k = random_kernel(dir.path(), &[64, 64, 3, 3], 4);
    let out_dir = dir.path().join("weights");
    let report = run_report(
        &dir,
        "c.json",
        &[
            "compress-conv",
            "--input",
            path_str(&k),
            "--rate",
            "2",
            "--bits",
            "4",
            "--outer-max",
            "2",
            "--inner-max",
            "3",
            "--als-iters",
            "1",
            "--out-dir",
            path_str(&out_dir),
        ],
    );
    assert_eq!(report["rank"], 134);
    assert_eq!(report["path"], "cpd");
    assert_eq!(read_tensor(out_dir.join("first.qtns")).unwrap().shape(), &[134, 64]);
    assert_eq!(read_tensor(out_dir.join("mid.qtns")).unwrap().shape(), &[3, 3, 134]);
    assert_eq!(read_tensor(out_dir.join("last.qtns")).unwrap().shape(), &[64, 134]);
    assert_eq!(report["bops"]["factorized"]["params_after"], 134 * (64 + 64 + 9));
}

#[test]
fn pointwise_kernel_uses_the_matrix_path() {
    let dir = tempfile::tempdir().unwrap();
    let k = random_kernel(dir.path(), &[12, 10, 1, 1], 6);
    let report = run_report(&dir, "p.json", &["compress-conv", "--input", path_str(&k), "--rate", "1"]);
    assert_eq!(report["path"], "matrix");
    assert_eq!(report["rank"], 5);
    // the factorized layer is exactly the quantized matrix factorization
    let e = report["e_quant"].as_f64().unwrap();
    let probe = report["probe_deviation"].as_f64().unwrap();
    assert!(probe > 0.0 && probe <= 1.0 && e > 0.0);
}

#[test]
fn compare_jobs_coincide_without_als_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = gen(&dir, "t.qtns", &["--shape", "10x9x4", "--rank", "3", "--noise", "0.02"]);
    let report = run_report(
        &dir,
        "c.json",
        &["compare", "--input", path_str(&input), "--rank", "3", "--bits", "4", "--als-iters", "0"],
    );
    assert_eq!(report["joint_random"], report["joint_balanced"]);
}

#[test]
fn compare_prefers_joint_solver_on_standard_fixture() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3u64 {
        let s = seed.to_string();
        let (input, _) = gen(
            &dir,
            &format!("f{seed}.qtns"),
            &["--shape", "64x64x9", "--rank", "16", "--noise", "0.01", "--seed", &s],
        );
        let als_seed = (seed + 1000).to_string();
        let report = run_report(
            &dir,
            &format!("c{seed}.json"),
            &["compare", "--input", path_str(&input), "--rank", "16", "--bits", "4", "--seed", &als_seed],
        );
        assert_eq!(report["winners"]["joint_balanced_vs_successive"], "joint_balanced", "{report:#}");
    }
}

#[test]
fn overcomplete_rank_is_noted() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = gen(&dir, "t.qtns", &["--shape", "3x3x2", "--rank", "2", "--noise", "0.1"]);
    let report = run_report(
        &dir,
        "o.json",
        &["qfactorize", "--input", path_str(&input), "--rank", "4", "--outer-max", "3"],
    );
    let notes = report["notes"].as_array().unwrap();
    assert_eq!(notes.len(), 1);
    assert!(notes[0].as_str().unwrap().contains("overcomplete"));
}

#[test]
fn trace_has_one_row_per_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = gen(&dir, "t.qtns", &["--shape", "8x8x4", "--rank", "2", "--noise", "0.01"]);
    let trace = dir.path().join("t.csv");
    let report = run_report(
        &dir,
        "r.json",
        &["qfactorize", "--input", path_str(&input), "--rank", "2", "--trace", path_str(&trace)],
    );
    let text = fs::read_to_string(trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sweep,e_quant,rel_error"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len() as u64, report["sweeps"].as_u64().unwrap());
    let best = rows.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min);
    assert_eq!(best, report["e_quant"].as_f64().unwrap());
}
