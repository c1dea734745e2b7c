//! Unconstrained CP-ALS and the column-balanced initialization handed to
//! the quantized solver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::tensor::{gram, mttkrp, reconstruct, rel_error, DenseTensor, FactorSet, Matrix};

/// Relative ridge added to the Hadamard Gram before each solve.
const GRAM_RIDGE: f64 = 1e-12;
const REFINE_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the relative error changes by less than this between sweeps.
    pub tol: f64,
    pub seed: u64,
}

impl AlsConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 10,
            tol: 1e-8,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

/// CP-ALS result with the relative error after every sweep.
#[derive(Debug, Clone)]
pub struct AlsOutcome {
    pub factors: FactorSet,
    pub errors: Vec<f64>,
}

fn check_order(t: &DenseTensor) -> Result<()> {
    if !(2..=3).contains(&t.ndim()) {
        return Err(Error::UnsupportedOrder(t.ndim(), "2 or 3"));
    }
    Ok(())
}

/// Seeded i.i.d. standard-normal factors, each scaled by
/// `(norm / rank)^(1/ndim)`. Factors are drawn in mode order, row-major.
pub fn random_factors(shape: &[usize], rank: usize, norm: f64, seed: u64) -> Result<FactorSet> {
    if rank == 0 {
        return Err(Error::ZeroRank);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (norm / rank as f64).powf(1.0 / shape.len() as f64);
    let factors = shape
        .iter()
        .map(|&n| {
            Matrix::from_fn(n, rank, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        })
        .collect();
    FactorSet::new(factors)
}

/// Relative error with the zero-tensor convention (0 when both are zero).
fn fit_error(t: &DenseTensor, fs: &FactorSet) -> Result<f64> {
    let approx = reconstruct(fs, t.shape())?;
    match rel_error(t, &approx) {
        Err(Error::ZeroNorm) => Ok(if approx.frobenius_norm() == 0.0 { 0.0 } else { f64::INFINITY }),
        other => other,
    }
}

/// Hadamard product of the Grams of every factor except `mode`.
pub(crate) fn gram_hadamard_except(grams: &[Matrix], mode: usize) -> Result<Matrix> {
    let mut others = grams.iter().enumerate().filter(|(m, _)| *m != mode);
    let mut acc = others.next().expect("at least two factors").1.clone();
    for (_, g) in others {
        acc = acc.hadamard(g)?;
    }
    Ok(acc)
}

fn als_update(t: &DenseTensor, factors: &mut [Matrix], mode: usize) -> Result<()> {
    let grams: Vec<Matrix> = factors.iter().map(gram).collect();
    let v = gram_hadamard_except(&grams, mode)?;
    let ridge = GRAM_RIDGE * v.trace();
    let mut reg = v.clone();
    for i in 0..reg.rows() {
        reg[(i, i)] += ridge;
    }
    let fs = FactorSet::new(factors.to_vec())?;
    let k = mttkrp(t, &fs, mode)?;
    let chol = Cholesky::factor(&reg)?;
    // Iterated Tikhonov: each step shrinks the ridge bias toward the
    // minimum-norm least-squares solution.
    let mut x = chol.solve_rows(&k)?;
    for _ in 0..REFINE_STEPS {
        let residual = k.sub(&x.matmul(&v)?)?;
        let step = chol.solve_rows(&residual)?;
        x = x.add(&step)?;
        if step.frobenius_norm() <= f64::EPSILON * x.frobenius_norm() {
            break;
        }
    }
    factors[mode] = x;
    Ok(())
}

/// CP-ALS with the per-sweep error trace.
pub fn cp_als_traced(t: &DenseTensor, cfg: &AlsConfig) -> Result<AlsOutcome> {
    check_order(t)?;
    if cfg.rank == 0 {
        return Err(Error::ZeroRank);
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("ALS needs at least one sweep".into()));
    }
    let norm = t.frobenius_norm();
    let init = random_factors(t.shape(), cfg.rank, norm, cfg.seed)?;
    if norm == 0.0 {
        return Ok(AlsOutcome {
            factors: init,
            errors: vec![0.0],
        });
    }
    let mut factors = init.into_factors();
    let mut errors = Vec::with_capacity(cfg.max_iters);
    for _ in 0..cfg.max_iters {
        for mode in 0..factors.len() {
            als_update(t, &mut factors, mode)?;
        }
        let err = fit_error(t, &FactorSet::new(factors.clone())?)?;
        let done = errors.last().is_some_and(|&prev: &f64| (prev - err).abs() < cfg.tol);
        errors.push(err);
        if done {
            break;
        }
    }
    Ok(AlsOutcome {
        factors: FactorSet::new(factors)?,
        errors,
    })
}

/// Unconstrained CP decomposition by alternating least squares.
pub fn cp_als(t: &DenseTensor, cfg: &AlsConfig) -> Result<FactorSet> {
    cp_als_traced(t, cfg).map(|o| o.factors)
}

/// Rescales each rank-1 term so its columns share the geometric mean of
/// their norms. Columns containing a zero vector are left as they are.
pub fn balance_factors(fs: &FactorSet) -> FactorSet {
    let ndim = fs.len() as f64;
    let norms: Vec<Vec<f64>> = fs.factors().iter().map(Matrix::column_norms).collect();
    let mut out: Vec<Matrix> = fs.factors().to_vec();
    for r in 0..fs.rank() {
        let col: Vec<f64> = norms.iter().map(|n| n[r]).collect();
        if col.iter().any(|&n| n == 0.0) {
            continue;
        }
        let target = col.iter().product::<f64>().powf(1.0 / ndim);
        for (f, n) in out.iter_mut().zip(&col) {
            f.scale_column(r, target / n);
        }
    }
    FactorSet::new(out).expect("shapes unchanged")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMode {
    /// Seeded normal factors scaled to the tensor norm; no ALS.
    Random,
    /// `cfg.max_iters` ALS sweeps followed by [`balance_factors`]. With zero
    /// sweeps this is the random draw itself.
    AlsBalanced,
}

pub fn init_for_admm(t: &DenseTensor, cfg: &AlsConfig, mode: InitMode) -> Result<FactorSet> {
    check_order(t)?;
    match mode {
        InitMode::Random => random_factors(t.shape(), cfg.rank, t.frobenius_norm(), cfg.seed),
        InitMode::AlsBalanced if cfg.max_iters == 0 => {
            random_factors(t.shape(), cfg.rank, t.frobenius_norm(), cfg.seed)
        }
        InitMode::AlsBalanced => Ok(balance_factors(&cp_als(t, cfg)?)),
    }
}
