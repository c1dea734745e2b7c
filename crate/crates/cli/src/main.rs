//! `qcpd` command-line front end.
//!
//! Exit codes: 0 on success, 1 on internal numerical failure, 2 on input or
//! usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod report;

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "qcpd", version, about = "Quantization-aware CP factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic low-rank tensor
    Gen(GenArgs),
    /// Unconstrained CP-ALS
    Factorize(FactorizeArgs),
    /// Factorization with on-grid factors
    Qfactorize(JobArgs),
    /// Factorize-then-quantize against the joint solver
    Compare(JobArgs),
    /// Compress a T×S×D×D convolution kernel
    CompressConv(CompressArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Minmax,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    AlsBalanced,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Extents separated by 'x' or ',', e.g. 64x64x9
    #[arg(long)]
    pub shape: String,
    #[arg(long)]
    pub rank: usize,
    /// Noise norm relative to the clean tensor
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Draw the factors on a grid with this many bits
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..=8))]
    pub grid_bits: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Directory receiving the generating factors as factor0.qtns, factor1.qtns, ...
    #[arg(long)]
    pub factors_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "size", required = true, multiple = false, args = ["rank", "rate"])]
pub struct SizeArgs {
    #[arg(long)]
    pub rank: Option<usize>,
    /// Parameter reduction rate used to derive the rank
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// JSON report path (stdout when absent)
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV trace path
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub als_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..=8))]
    pub bits: u32,
    #[arg(long, value_enum, default_value_t = SchemeArg::Mse)]
    pub scheme: SchemeArg,
    /// Asymmetric grids (MinMax only)
    #[arg(long)]
    pub asymmetric: bool,
    #[arg(long, value_enum, default_value_t = InitArg::AlsBalanced)]
    pub init: InitArg,
    /// ALS sweeps used by the balanced initialization and the baseline
    #[arg(long, default_value_t = 10)]
    pub als_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 20)]
    pub inner_max: usize,
    #[arg(long, default_value_t = 200)]
    pub outer_max: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub min_improve: f64,
}

#[derive(Debug, Args)]
pub struct JobArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub size: SizeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Directory of factor0.qtns, factor1.qtns, ... used as the starting
    /// point instead of --init
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Input height for BOP accounting
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    /// Input width for BOP accounting
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    /// Activation bit-width for BOP accounting
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..=32))]
    pub act_bits: u32,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// T×S×D×D kernel tensor
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub rate: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..=32))]
    pub act_bits: u32,
    /// Directory receiving first.qtns, mid.qtns and last.qtns
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Factorize(a) => commands::factorize(&a),
        Command::Qfactorize(a) => commands::qfactorize(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::CompressConv(a) => commands::compress_conv(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Internal(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
