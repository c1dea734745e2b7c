//! JSON reports and CSV traces. Field order is fixed by the struct layout so
//! repeated runs serialize identically apart from `wall_time`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qcpd::layer::BopReport;
use qcpd::SweepRecord;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Bops {
    pub macs: u64,
    pub b_w: u32,
    pub b_a: u32,
    pub bops: u64,
    pub params_before: u64,
    pub params_after: u64,
}

impl From<BopReport> for Bops {
    fn from(r: BopReport) -> Self {
        Self {
            macs: r.macs,
            b_w: r.b_w,
            b_a: r.b_a,
            bops: r.bops,
            params_before: r.params_before,
            params_after: r.params_after,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LayerBops {
    pub original: Bops,
    pub factorized: Bops,
}

#[derive(Debug, Serialize)]
pub struct CompressionReport {
    pub command: &'static str,
    pub shape: Vec<usize>,
    pub rank: usize,
    pub bits: u32,
    pub scheme: &'static str,
    pub symmetric: bool,
    pub init: &'static str,
    pub seed: u64,
    pub e_quant: f64,
    /// Relative error of the real-valued auxiliary factors at the returned sweep.
    pub rel_error: f64,
    pub params_before: u64,
    pub params_after: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bops: Option<LayerBops>,
    pub sweeps: usize,
    pub best_sweep: usize,
    pub converged: bool,
    pub notes: Vec<String>,
    pub wall_time: f64,
}

#[derive(Debug, Serialize)]
pub struct AlsReport {
    pub command: &'static str,
    pub shape: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
    pub rel_error: f64,
    pub params_before: u64,
    pub params_after: u64,
    pub sweeps: usize,
    pub wall_time: f64,
}

#[derive(Debug, Serialize)]
pub struct JobOutcome {
    pub e_quant: f64,
    pub sweeps: usize,
}

#[derive(Debug, Serialize)]
pub struct Winners {
    pub joint_balanced_vs_successive: &'static str,
    pub joint_random_vs_successive: &'static str,
    pub joint_balanced_vs_joint_random: &'static str,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub command: &'static str,
    pub shape: Vec<usize>,
    pub rank: usize,
    pub bits: u32,
    pub scheme: &'static str,
    pub symmetric: bool,
    pub seed: u64,
    pub successive: JobOutcome,
    pub joint_random: JobOutcome,
    pub joint_balanced: JobOutcome,
    pub winners: Winners,
    pub wall_time: f64,
}

#[derive(Debug, Serialize)]
pub struct ConvReport {
    pub command: &'static str,
    pub kernel_shape: Vec<usize>,
    pub rank: usize,
    pub rate: f64,
    pub bits: u32,
    pub scheme: &'static str,
    pub symmetric: bool,
    pub init: &'static str,
    pub seed: u64,
    pub path: &'static str,
    pub e_quant: f64,
    pub rel_error: f64,
    /// ‖factorized_forward − direct_conv‖ / ‖direct_conv‖ on a seeded probe.
    pub probe_deviation: f64,
    pub bops: LayerBops,
    pub sweeps: usize,
    pub converged: bool,
    /// Bias is passed through unchanged by the last pointwise stage.
    pub bias: &'static str,
    pub wall_time: f64,
}

#[derive(Debug, Serialize)]
pub struct GenReport {
    pub command: &'static str,
    pub shape: Vec<usize>,
    pub rank: usize,
    pub noise: f64,
    pub grid_bits: Option<u32>,
    pub seed: u64,
    /// Relative error of the generating factors; the reachable e_quant floor
    /// when the factors are on-grid.
    pub floor: f64,
}

/// Writes pretty JSON to `path`, or stdout when no path is given.
pub fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_trace(path: &Path, trace: &[SweepRecord]) -> std::io::Result<()> {
    let mut out = String::from("sweep,e_quant,rel_error\n");
    for r in trace {
        writeln!(out, "{},{:e},{:e}", r.sweep, r.e_quant, r.rel_error).expect("write to String");
    }
    fs::write(path, out)
}

pub fn write_als_trace(path: &Path, errors: &[f64]) -> std::io::Result<()> {
    let mut out = String::from("sweep,rel_error\n");
    for (i, e) in errors.iter().enumerate() {
        writeln!(out, "{},{:e}", i + 1, e).expect("write to String");
    }
    fs::write(path, out)
}
