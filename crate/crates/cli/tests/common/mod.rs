//! Helpers shared by the binary-level tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub fn qcpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcpd"))
        .args(args)
        .output()
        .expect("failed to launch qcpd")
}

pub fn qcpd_ok(args: &[&str]) -> Output {
    let out = qcpd(args);
    assert!(
        out.status.success(),
        "qcpd {:?} failed with {:?}: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).expect("report written")).expect("valid JSON")
}

/// The report with its timing field removed.
pub fn without_timing(mut v: Value) -> Value {
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_time");
    }
    v
}

/// Report bytes with the `wall_time` line dropped.
pub fn strip_timing(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_time\""))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn header(ndim: u32, dims: &[u32], version: u32, dtype: u32) -> Vec<u8> {
    let mut b = b"QTNS".to_vec();
    b.extend(version.to_le_bytes());
    b.extend(ndim.to_le_bytes());
    for d in dims {
        b.extend(d.to_le_bytes());
    }
    b.extend(dtype.to_le_bytes());
    b
}

/// A named set of broken tensor files and a fragment their diagnostic must
/// contain.
pub fn malformed_files() -> Vec<(&'static str, Vec<u8>, &'static str)> {
    let mut good = header(2, &[2, 3], 1, 0);
    good.extend((0..6).flat_map(|i| f64::from(i).to_le_bytes()));
    let mut truncated_payload = good.clone();
    truncated_payload.truncate(good.len() - 5);
    let mut trailing = good.clone();
    trailing.push(0);
    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"QTNZ");
    vec![
        ("empty", Vec::new(), "offset 0"),
        ("short header", good[..10].to_vec(), "offset 8"),
        ("truncated payload", truncated_payload, "offset 24"),
        ("trailing bytes", trailing, "offset 72"),
        ("bad magic", bad_magic, "offset 0"),
        ("version 2", header(2, &[2, 3], 2, 0), "offset 4"),
        ("dtype 1", header(2, &[2, 3], 1, 1), "offset 20"),
        ("zero dimension", header(2, &[2, 0], 1, 0), "offset 16"),
        ("no dimensions", header(0, &[], 1, 0), "offset 8"),
    ]
}
