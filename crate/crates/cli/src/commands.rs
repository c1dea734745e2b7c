//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::time::Instant;

use qcpd::admm::quantized_matrix_factorization;
use qcpd::bench;
use qcpd::cpd::cp_als_traced;
use qcpd::io::{read_tensor, write_tensor, FormatError};
use qcpd::layer::{
    bop_count, probe_deviation, reshape_kernel, select_rank, select_rank_for_shape, ConvLayerSpec,
    FactorizedConvWeights, LayerSpec,
};
use qcpd::synth::{generate, SyntheticSpec};
use qcpd::{
    e_quant, init_for_admm, quantized_cpd, quantized_factorize, AdmmConfig, AlsConfig, DenseTensor, FactorSet, InitMode,
    QuantScheme, QuantizedFactorSet,
};
use thiserror::Error;

use crate::report::{
    self, AlsReport, CompareReport, CompressionReport, ConvReport, GenReport, JobOutcome, LayerBops,
    Winners,
};
use crate::{CompressArgs, FactorizeArgs, GenArgs, InitArg, JobArgs, SchemeArg, SizeArgs, SolverArgs};

/// Seed offset of the probe input, kept apart from the factor seeds.
const PROBE_SEED_OFFSET: u64 = 0x5eed;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Format(#[from] FormatError),
    #[error("invalid input: {0}")]
    Input(qcpd::Error),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
    #[error("numerical failure: {0}")]
    Internal(qcpd::Error),
}

impl From<qcpd::Error> for CliError {
    fn from(e: qcpd::Error) -> Self {
        match e {
            qcpd::Error::NotPositiveDefinite { .. } => CliError::Internal(e),
            other => CliError::Input(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn parse_shape(text: &str) -> CliResult<Vec<usize>> {
    let dims: Result<Vec<usize>, _> = text.split(['x', 'X', ',']).map(|p| p.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() && !d.contains(&0) => Ok(d),
        _ => Err(CliError::Usage(format!("invalid shape {text:?}; expected e.g. 64x64x9"))),
    }
}

fn scheme_of(args: &SolverArgs) -> CliResult<QuantScheme> {
    match (args.scheme, args.asymmetric) {
        (SchemeArg::Minmax, asym) => Ok(QuantScheme::minmax(!asym)),
        (SchemeArg::Mse, false) => Ok(QuantScheme::mse()),
        (SchemeArg::Mse, true) => Err(CliError::Usage("--asymmetric requires --scheme minmax".into())),
    }
}

fn scheme_name(s: SchemeArg) -> &'static str {
    match s {
        SchemeArg::Minmax => "minmax",
        SchemeArg::Mse => "mse",
    }
}

fn init_of(i: InitArg) -> (InitMode, &'static str) {
    match i {
        InitArg::Random => (InitMode::Random, "random"),
        InitArg::AlsBalanced => (InitMode::AlsBalanced, "als-balanced"),
    }
}

fn admm_config(args: &SolverArgs) -> CliResult<AdmmConfig> {
    let cfg = AdmmConfig {
        eps: args.eps,
        inner_max: args.inner_max,
        outer_max: args.outer_max,
        patience: args.patience,
        min_improve: args.min_improve,
        ..AdmmConfig::new(args.bits, scheme_of(args)?)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn rank_of(size: &SizeArgs, shape: &[usize]) -> CliResult<usize> {
    match (size.rank, size.rate) {
        (Some(0), _) => Err(CliError::Usage("--rank must be at least 1".into())),
        (Some(r), None) => Ok(r),
        (None, Some(rate)) => Ok(select_rank_for_shape(shape, rate)?),
        _ => Err(CliError::Usage("exactly one of --rank and --rate is required".into())),
    }
}

fn load(path: &Path, orders: &[usize]) -> CliResult<DenseTensor> {
    let t = read_tensor(path)?;
    if !orders.contains(&t.ndim()) {
        return Err(CliError::Usage(format!(
            "{}: a {}-way tensor is not supported here (expected {:?})",
            path.display(),
            t.ndim(),
            orders
        )));
    }
    Ok(t)
}

fn load_factors(dir: &Path, count: usize) -> CliResult<FactorSet> {
    let mut factors = Vec::with_capacity(count);
    for i in 0..count {
        let path = dir.join(format!("factor{i}.qtns"));
        let t = load(&path, &[2])?;
        factors.push(t.to_matrix()?);
    }
    Ok(FactorSet::new(factors)?)
}

fn params(shape: &[usize], rank: usize) -> (u64, u64) {
    let before = shape.iter().map(|&n| n as u64).product();
    let after = rank as u64 * shape.iter().map(|&n| n as u64).sum::<u64>();
    (before, after)
}

/// Reads the weight as a layer: `T × S` is a 1×1 convolution, `T × S × D²`
/// a `D × D` convolution.
fn layer_of(shape: &[usize], height: usize, width: usize) -> CliResult<ConvLayerSpec> {
    let kernel = match shape {
        [_, _] => 1,
        [_, _, dd] => {
            let d = (*dd as f64).sqrt().round() as usize;
            if d * d != *dd {
                return Err(CliError::Usage(format!("third extent {dd} is not a square kernel area")));
            }
            d
        }
        _ => unreachable!("order checked on load"),
    };
    ConvLayerSpec::new(shape[0], shape[1], kernel, height, width)
        .map_err(|e| CliError::Usage(format!("cannot read the tensor as a layer: {e}")))
}

fn layer_bops(layer: ConvLayerSpec, b_w: u32, b_a: u32, rank: usize) -> CliResult<LayerBops> {
    let spec = LayerSpec::Conv(layer);
    Ok(LayerBops {
        original: bop_count(&spec, b_w, b_a, None)?.into(),
        factorized: bop_count(&spec, b_w, b_a, Some(rank))?.into(),
    })
}

fn rel_error_of(qfs: &QuantizedFactorSet) -> f64 {
    qfs.best_record().map_or(f64::NAN, |r| r.rel_error)
}

fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn gen(args: &GenArgs) -> CliResult {
    let shape = parse_shape(&args.shape)?;
    let spec = SyntheticSpec {
        shape: shape.clone(),
        rank: args.rank,
        noise: args.noise,
        grid_bits: args.grid_bits,
        seed: args.seed,
    };
    let s = generate(&spec)?;
    write_tensor(&args.output, &s.tensor)?;
    if let Some(dir) = &args.factors_out {
        fs::create_dir_all(dir)?;
        for (i, f) in s.truth.factors().iter().enumerate() {
            write_tensor(dir.join(format!("factor{i}.qtns")), &f.to_tensor())?;
        }
    }
    report::emit(
        &GenReport {
            command: "gen",
            shape,
            rank: args.rank,
            noise: args.noise,
            grid_bits: args.grid_bits,
            seed: args.seed,
            floor: s.floor,
        },
        None,
    )?;
    Ok(())
}

pub fn factorize(args: &FactorizeArgs) -> CliResult {
    let start = Instant::now();
    let t = load(&args.input, &[2, 3])?;
    let rank = rank_of(&args.size, t.shape())?;
    let cfg = AlsConfig {
        rank,
        max_iters: args.als_iters,
        tol: args.tol,
        seed: args.seed,
    };
    let out = cp_als_traced(&t, &cfg)?;
    if let Some(p) = &args.out.trace {
        report::write_als_trace(p, &out.errors)?;
    }
    let (params_before, params_after) = params(t.shape(), rank);
    let rep = AlsReport {
        command: "factorize",
        shape: t.shape().to_vec(),
        rank,
        seed: args.seed,
        rel_error: out.errors.last().copied().unwrap_or(f64::NAN),
        params_before,
        params_after,
        sweeps: out.errors.len(),
        wall_time: elapsed(start),
    };
    report::emit(&rep, args.out.report.as_deref())?;
    Ok(())
}

fn als_config(rank: usize, s: &SolverArgs) -> AlsConfig {
    AlsConfig {
        max_iters: s.als_iters,
        seed: s.seed,
        ..AlsConfig::new(rank)
    }
}

pub fn qfactorize(args: &JobArgs) -> CliResult {
    let start = Instant::now();
    let t = load(&args.input, &[2, 3])?;
    let shape = t.shape().to_vec();
    let rank = rank_of(&args.size, &shape)?;
    let cfg = admm_config(&args.solver)?;
    let layer = match (args.height, args.width) {
        (Some(h), Some(w)) => Some(layer_of(&shape, h, w)?),
        _ => None,
    };
    let (start_fs, init_name) = match &args.init_from {
        Some(dir) => (load_factors(dir, t.ndim())?, "file"),
        None => {
            let (mode, name) = init_of(args.solver.init);
            (init_for_admm(&t, &als_config(rank, &args.solver), mode)?, name)
        }
    };
    let qfs = quantized_factorize(&t, rank, &cfg, &start_fs)?;
    if let Some(p) = &args.out.trace {
        report::write_trace(p, qfs.trace())?;
    }

    let mut notes = Vec::new();
    if shape.iter().all(|&n| rank > n) {
        notes.push(format!("overcomplete: rank {rank} exceeds every extent of {shape:?}"));
    }
    let (params_before, params_after) = params(&shape, rank);
    let bops = layer
        .map(|l| layer_bops(l, args.solver.bits, args.act_bits, rank))
        .transpose()?;
    let rep = CompressionReport {
        command: "qfactorize",
        rank,
        bits: cfg.bits,
        scheme: scheme_name(args.solver.scheme),
        symmetric: cfg.scheme.is_symmetric(),
        init: init_name,
        seed: args.solver.seed,
        e_quant: e_quant(&t, &qfs)?,
        rel_error: rel_error_of(&qfs),
        params_before,
        params_after,
        bops,
        sweeps: qfs.sweeps(),
        best_sweep: qfs.best_sweep(),
        converged: qfs.stopped_early(),
        notes,
        shape,
        wall_time: elapsed(start),
    };
    report::emit(&rep, args.out.report.as_deref())?;
    Ok(())
}

fn winner(joint: f64, joint_label: &'static str, other: f64, other_label: &'static str) -> &'static str {
    if joint <= other {
        joint_label
    } else {
        other_label
    }
}

pub fn compare(args: &JobArgs) -> CliResult {
    let start = Instant::now();
    let t = load(&args.input, &[2, 3])?;
    let shape = t.shape().to_vec();
    let rank = rank_of(&args.size, &shape)?;
    let cfg = admm_config(&args.solver)?;
    let als = als_config(rank, &args.solver);
    let c = bench::compare(&t, &als, &cfg)?;
    if let Some(p) = &args.out.trace {
        report::write_trace(p, c.joint_balanced.trace())?;
    }
    let rep = CompareReport {
        command: "compare",
        shape,
        rank,
        bits: cfg.bits,
        scheme: scheme_name(args.solver.scheme),
        symmetric: cfg.scheme.is_symmetric(),
        seed: args.solver.seed,
        successive: JobOutcome {
            e_quant: c.e_successive,
            sweeps: 0,
        },
        joint_random: JobOutcome {
            e_quant: c.e_joint_random,
            sweeps: c.joint_random.sweeps(),
        },
        joint_balanced: JobOutcome {
            e_quant: c.e_joint_balanced,
            sweeps: c.joint_balanced.sweeps(),
        },
        winners: Winners {
            joint_balanced_vs_successive: winner(
                c.e_joint_balanced,
                "joint_balanced",
                c.e_successive,
                "successive",
            ),
            joint_random_vs_successive: winner(c.e_joint_random, "joint_random", c.e_successive, "successive"),
            joint_balanced_vs_joint_random: winner(
                c.e_joint_balanced,
                "joint_balanced",
                c.e_joint_random,
                "joint_random",
            ),
        },
        wall_time: elapsed(start),
    };
    report::emit(&rep, args.out.report.as_deref())?;
    Ok(())
}

pub fn compress_conv(args: &CompressArgs) -> CliResult {
    let start = Instant::now();
    let k4 = load(&args.input, &[4])?;
    let ks = k4.shape().to_vec();
    if ks[2] != ks[3] || ks[2] % 2 == 0 {
        return Err(CliError::Usage(format!("kernel {ks:?} is not T×S×D×D with odd D")));
    }
    let layer = ConvLayerSpec::new(ks[0], ks[1], ks[2], args.height, args.width)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rank = select_rank(&layer.shape(), args.rate)?;
    let cfg = admm_config(&args.solver)?;
    let (mode, init_name) = init_of(args.solver.init);
    let als = als_config(rank, &args.solver);

    let (target, path) = if ks[2] == 1 {
        (k4.reshape(&[ks[0], ks[1]])?, "matrix")
    } else {
        (reshape_kernel(&k4)?, "cpd")
    };
    let start_fs = init_for_admm(&target, &als, mode)?;
    let qfs = if ks[2] == 1 {
        quantized_matrix_factorization(&target.to_matrix()?, rank, &cfg, &start_fs)?
    } else {
        quantized_cpd(&target, rank, &cfg, &start_fs)?
    };
    let fs = qfs.factors();
    let wts = if ks[2] == 1 {
        FactorizedConvWeights::from_pointwise(fs.factor(0).clone(), fs.factor(1))?
    } else {
        FactorizedConvWeights::from_cp(fs)?
    };
    if let Some(p) = &args.out.trace {
        report::write_trace(p, qfs.trace())?;
    }
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        write_tensor(dir.join("first.qtns"), &wts.first.to_tensor())?;
        write_tensor(dir.join("mid.qtns"), &wts.mid)?;
        write_tensor(dir.join("last.qtns"), &wts.last.to_tensor())?;
    }
    let probe = match probe_deviation(&k4, &wts, args.height, args.width, args.solver.seed ^ PROBE_SEED_OFFSET) {
        Err(qcpd::Error::ZeroNorm) => 0.0,
        other => other?,
    };
    let rep = ConvReport {
        command: "compress-conv",
        kernel_shape: ks,
        rank,
        rate: args.rate,
        bits: cfg.bits,
        scheme: scheme_name(args.solver.scheme),
        symmetric: cfg.scheme.is_symmetric(),
        init: init_name,
        seed: args.solver.seed,
        path,
        e_quant: e_quant(&target, &qfs)?,
        rel_error: rel_error_of(&qfs),
        probe_deviation: probe,
        bops: layer_bops(layer, args.solver.bits, args.act_bits, rank)?,
        sweeps: qfs.sweeps(),
        converged: qfs.stopped_early(),
        bias: "pass-through",
        wall_time: elapsed(start),
    };
    report::emit(&rep, args.out.report.as_deref())?;
    Ok(())
}
