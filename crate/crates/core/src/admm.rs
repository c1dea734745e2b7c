//! Quantization-constrained CP factorization by alternating ADMM.
//!
//! Each factor update splits the least-squares subproblem into a real-valued
//! auxiliary `B̃` (closed-form ridge solve through one Cholesky factor of
//! `G + ρI`) and the constrained factor `B = proj_Q(B̃ᵀ − U)`, tied together
//! by the scaled dual `U`. The outer loop cycles over the factors with the
//! duals carried across sweeps and keeps the sweep with the lowest
//! quantized reconstruction error.

use crate::cpd::gram_hadamard_except;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::quant::{check_bits, project_values, IntTensor, QuantGrid, QuantScheme};
use crate::tensor::{
    gram, khatri_rao_except, mttkrp, reconstruct, rel_error, unfold, DenseTensor, FactorSet, Matrix,
};

/// Penalty used when `trace(G)` is (numerically) zero.
const RHO_FALLBACK: f64 = 1e-3;
const RHO_TRACE_FLOOR: f64 = 1e-12;
/// A dual with `‖U‖² ≤ DUAL_NOISE_FLOOR·‖B‖²` is rounding noise and counts
/// as zero in the `s` residual.
const DUAL_NOISE_FLOOR: f64 = 64.0 * f64::EPSILON * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub bits: u32,
    pub scheme: QuantScheme,
    /// Threshold on both residuals `r` and `s`.
    pub eps: f64,
    pub inner_max: usize,
    pub outer_max: usize,
    /// Sweeps without sufficient improvement before stopping.
    pub patience: usize,
    /// Relative e_quant improvement that resets the patience counter.
    pub min_improve: f64,
}

impl AdmmConfig {
    pub fn new(bits: u32, scheme: QuantScheme) -> Self {
        Self {
            bits,
            scheme,
            eps: 1e-3,
            inner_max: 20,
            outer_max: 200,
            patience: 3,
            min_improve: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.inner_max == 0 || self.outer_max == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "inner_max, outer_max and patience must be at least 1".into(),
            ));
        }
        if !(self.min_improve >= 0.0) {
            return Err(Error::InvalidConfig("min_improve must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-factor ADMM state carried between outer sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub dual: Matrix,
    pub rho: f64,
    pub r: f64,
    pub s: f64,
}

impl AdmmState {
    pub fn zeros(rows: usize, rank: usize) -> Self {
        Self {
            dual: Matrix::zeros(rows, rank),
            rho: 0.0,
            r: f64::INFINITY,
            s: f64::INFINITY,
        }
    }
}

/// Everything visible to an observer after one inner iteration.
#[derive(Debug)]
pub struct InnerStep<'a> {
    pub iteration: usize,
    pub rho: f64,
    /// `G + ρI`.
    pub system: &'a Matrix,
    pub k: &'a Matrix,
    /// `K + ρ(B + U)`; each row is one right-hand side.
    pub rhs: &'a Matrix,
    /// `B̃ᵀ`, the solution of `(G + ρI)·B̃ = rhsᵀ`.
    pub aux: &'a Matrix,
    pub prev_factor: &'a Matrix,
    pub factor: &'a Matrix,
    pub prev_dual: &'a Matrix,
    pub dual: &'a Matrix,
    pub grid: &'a QuantGrid,
    pub r: f64,
    pub s: f64,
}

/// Hook for inspecting inner iterations; `mode` is the factor being updated.
pub trait InnerObserver {
    fn observe(&mut self, mode: usize, step: &InnerStep<'_>);
}

impl<F: FnMut(usize, &InnerStep<'_>)> InnerObserver for F {
    fn observe(&mut self, mode: usize, step: &InnerStep<'_>) {
        self(mode, step)
    }
}

struct Silent;

impl InnerObserver for Silent {
    fn observe(&mut self, _: usize, _: &InnerStep<'_>) {}
}

/// Output of one constrained factor update.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorUpdate {
    /// On-grid factor.
    pub factor: Matrix,
    pub dual: Matrix,
    /// Last real-valued auxiliary iterate `B̃ᵀ`.
    pub aux: Matrix,
    pub grid: QuantGrid,
    pub codes: Vec<i32>,
    pub rho: f64,
    pub r: f64,
    pub s: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FactorUpdate {
    pub fn state(&self) -> AdmmState {
        AdmmState {
            dual: self.dual.clone(),
            rho: self.rho,
            r: self.r,
            s: self.s,
        }
    }
}

/// `num / den`, with `den` replaced by 1 when it is zero or lies below
/// the rounding-noise floor `floor`.
fn guarded_ratio(num: f64, den: f64, floor: f64) -> f64 {
    num / if den <= floor { 1.0 } else { den }
}

fn diff_norm_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One constrained least-squares factor update.
///
/// `factor` and `dual` are `n × R`, `k` is the MTTKRP (`n × R`) and `g` the
/// `R × R` Hadamard Gram of the fixed factors.
pub fn admm_factor_update(
    factor: &Matrix,
    dual: &Matrix,
    k: &Matrix,
    g: &Matrix,
    rank: usize,
    cfg: &AdmmConfig,
) -> Result<FactorUpdate> {
    admm_factor_update_observed(factor, dual, k, g, rank, cfg, 0, &mut Silent)
}

#[allow(clippy::too_many_arguments)]
pub fn admm_factor_update_observed(
    factor: &Matrix,
    dual: &Matrix,
    k: &Matrix,
    g: &Matrix,
    rank: usize,
    cfg: &AdmmConfig,
    mode: usize,
    observer: &mut dyn InnerObserver,
) -> Result<FactorUpdate> {
    cfg.validate()?;
    if rank == 0 {
        return Err(Error::ZeroRank);
    }
    let (n, cols) = factor.shape();
    if cols != rank || dual.shape() != (n, rank) || k.shape() != (n, rank) || g.shape() != (rank, rank) {
        return Err(Error::ShapeMismatch(format!(
            "factor {:?}, dual {:?}, K {:?}, G {:?} for rank {rank}",
            factor.shape(),
            dual.shape(),
            k.shape(),
            g.shape()
        )));
    }

    let trace = g.trace();
    let rho = if trace > RHO_TRACE_FLOOR {
        trace / rank as f64
    } else {
        RHO_FALLBACK
    };
    let mut system = g.clone();
    for i in 0..rank {
        system[(i, i)] += rho;
    }
    let chol = Cholesky::factor(&system)?;

    let mut b = factor.clone();
    let mut u = dual.clone();
    let mut aux = factor.clone();
    let mut grid = None;
    let mut codes = Vec::new();
    let (mut r, mut s) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..cfg.inner_max {
        iterations = it + 1;
        let rhs = Matrix::from_fn(n, rank, |i, j| k[(i, j)] + rho * (b[(i, j)] + u[(i, j)]));
        aux = chol.solve_rows(&rhs)?;

        let target: Vec<f64> = aux.data().iter().zip(u.data()).map(|(a, d)| a - d).collect();
        let proj = project_values(&target, cfg.bits, cfg.scheme)?;
        let prev_b = std::mem::replace(&mut b, Matrix::from_vec(n, rank, proj.values)?);

        let prev_u = u.clone();
        for ((ud, &bv), &av) in u.data_mut().iter_mut().zip(b.data()).zip(aux.data()) {
            *ud += bv - av;
        }

        let b_sq = b.frobenius_norm_sq();
        r = guarded_ratio(diff_norm_sq(b.data(), aux.data()), b_sq, 0.0);
        s = guarded_ratio(
            diff_norm_sq(b.data(), prev_b.data()),
            u.frobenius_norm_sq(),
            DUAL_NOISE_FLOOR * b_sq,
        );

        observer.observe(
            mode,
            &InnerStep {
                iteration: it,
                rho,
                system: &system,
                k,
                rhs: &rhs,
                aux: &aux,
                prev_factor: &prev_b,
                factor: &b,
                prev_dual: &prev_u,
                dual: &u,
                grid: &proj.grid,
                r,
                s,
            },
        );
        grid = Some(proj.grid);
        codes = proj.codes;

        if r < cfg.eps && s < cfg.eps {
            converged = true;
            break;
        }
    }

    Ok(FactorUpdate {
        factor: b,
        dual: u,
        aux,
        grid: grid.expect("inner_max >= 1"),
        codes,
        rho,
        r,
        s,
        iterations,
        converged,
    })
}

/// One outer sweep's summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    pub e_quant: f64,
    /// Relative error of the real-valued auxiliary factors `B̃ᵀ`.
    pub rel_error: f64,
}

/// On-grid factors with their grids, integer codes and the sweep trace.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedFactorSet {
    factors: FactorSet,
    grids: Vec<QuantGrid>,
    codes: Vec<IntTensor>,
    trace: Vec<SweepRecord>,
    best_sweep: usize,
    stopped_early: bool,
}

impl QuantizedFactorSet {
    /// Assembles a set from codes and grids; the factors are their
    /// dequantized values.
    pub fn from_codes(codes: Vec<IntTensor>, grids: Vec<QuantGrid>) -> Result<Self> {
        if codes.len() != grids.len() {
            return Err(Error::ShapeMismatch("one grid per factor".into()));
        }
        let mut factors = Vec::with_capacity(codes.len());
        for (c, g) in codes.iter().zip(&grids) {
            if c.shape().len() != 2 {
                return Err(Error::ShapeMismatch("factor codes must be 2-way".into()));
            }
            let t = crate::quant::dequantize(c, g)?;
            factors.push(Matrix::from_vec(c.shape()[0], c.shape()[1], t.into_data())?);
        }
        Ok(Self {
            factors: FactorSet::new(factors)?,
            grids,
            codes,
            trace: Vec::new(),
            best_sweep: 0,
            stopped_early: false,
        })
    }

    pub fn factors(&self) -> &FactorSet {
        &self.factors
    }

    pub fn grids(&self) -> &[QuantGrid] {
        &self.grids
    }

    pub fn codes(&self) -> &[IntTensor] {
        &self.codes
    }

    pub fn trace(&self) -> &[SweepRecord] {
        &self.trace
    }

    /// Sweep (1-based) whose iterate was returned; 0 when not produced by
    /// the solver.
    pub fn best_sweep(&self) -> usize {
        self.best_sweep
    }

    /// Number of outer sweeps executed.
    pub fn sweeps(&self) -> usize {
        self.trace.len()
    }

    /// True when the patience rule stopped the run before `outer_max`.
    pub fn stopped_early(&self) -> bool {
        self.stopped_early
    }

    pub fn best_record(&self) -> Option<&SweepRecord> {
        self.trace.iter().find(|r| r.sweep == self.best_sweep)
    }
}

/// Projects each factor once onto its own grid: quantization applied after
/// an unconstrained factorization.
pub fn quantize_factors(fs: &FactorSet, bits: u32, scheme: QuantScheme) -> Result<QuantizedFactorSet> {
    let mut codes = Vec::with_capacity(fs.len());
    let mut grids = Vec::with_capacity(fs.len());
    for f in fs.factors() {
        let p = project_values(f.data(), bits, scheme)?;
        codes.push(IntTensor::new(vec![f.rows(), f.cols()], p.codes)?);
        grids.push(p.grid);
    }
    QuantizedFactorSet::from_codes(codes, grids)
}

/// Quantized reconstruction error
/// `‖X₍₁₎ − F₁·khatri_rao(others)ᵀ‖_F / ‖X₍₁₎‖_F` (mode-1 unfolding).
pub fn e_quant(t: &DenseTensor, qfs: &QuantizedFactorSet) -> Result<f64> {
    e_quant_of(t, qfs.factors())
}

/// [`e_quant`] for any factor set.
pub fn e_quant_of(t: &DenseTensor, fs: &FactorSet) -> Result<f64> {
    fs.check_against(t.shape())?;
    let x1 = unfold(t, 1)?;
    e_quant_unfolded(&x1, fs)
}

fn e_quant_unfolded(x1: &Matrix, fs: &FactorSet) -> Result<f64> {
    let norm = x1.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let kr = khatri_rao_except(fs, 1)?;
    let approx = fs.factor(1).matmul_t(&kr)?;
    Ok(diff_norm_sq(x1.data(), approx.data()).sqrt() / norm)
}

struct Snapshot {
    factors: Vec<Matrix>,
    grids: Vec<QuantGrid>,
    codes: Vec<Vec<i32>>,
}

fn alternate(
    t: &DenseTensor,
    rank: usize,
    order: &[usize],
    cfg: &AdmmConfig,
    init: &FactorSet,
    observer: &mut dyn InnerObserver,
) -> Result<QuantizedFactorSet> {
    cfg.validate()?;
    if rank == 0 {
        return Err(Error::ZeroRank);
    }
    if init.len() != t.ndim() || init.rank() != rank {
        return Err(Error::ShapeMismatch(format!(
            "initial factors of rank {} for {}-way rank-{rank} problem",
            init.rank(),
            t.ndim()
        )));
    }
    init.check_against(t.shape())?;
    let x1 = unfold(t, 1)?;
    if x1.frobenius_norm() == 0.0 {
        return Err(Error::ZeroNorm);
    }

    let mut factors: Vec<Matrix> = init.factors().to_vec();
    let mut aux = factors.clone();
    let mut duals: Vec<Matrix> = factors.iter().map(|f| Matrix::zeros(f.rows(), rank)).collect();
    let mut grids: Vec<Option<QuantGrid>> = vec![None; factors.len()];
    let mut codes: Vec<Vec<i32>> = vec![Vec::new(); factors.len()];

    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let mut stall = 0;
    let mut stopped_early = false;

    for sweep in 1..=cfg.outer_max {
        for &mode in order {
            let grams: Vec<Matrix> = factors.iter().map(gram).collect();
            let g = gram_hadamard_except(&grams, mode)?;
            let k = mttkrp(t, &FactorSet::new(factors.clone())?, mode)?;
            let upd = admm_factor_update_observed(
                &factors[mode],
                &duals[mode],
                &k,
                &g,
                rank,
                cfg,
                mode,
                observer,
            )?;
            factors[mode] = upd.factor;
            duals[mode] = upd.dual;
            aux[mode] = upd.aux;
            grids[mode] = Some(upd.grid);
            codes[mode] = upd.codes;
        }

        let fs = FactorSet::new(factors.clone())?;
        let e = e_quant_unfolded(&x1, &fs)?;
        let aux_err = rel_error(t, &reconstruct(&FactorSet::new(aux.clone())?, t.shape())?)?;
        trace.push(SweepRecord {
            sweep,
            e_quant: e,
            rel_error: aux_err,
        });

        let best_e = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if e < best_e {
            // e_quant is relative, so gains below machine epsilon are rounding noise
            let gain = best_e - e;
            let enough = best_e.is_infinite() || (gain > cfg.min_improve * best_e && gain > f64::EPSILON);
            stall = if enough { 0 } else { stall + 1 };
            best = Some((
                e,
                sweep,
                Snapshot {
                    factors: factors.clone(),
                    grids: grids.iter().map(|g| g.expect("every factor updated")).collect(),
                    codes: codes.clone(),
                },
            ));
        } else {
            stall += 1;
        }
        if stall >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (_, best_sweep, snap) = match best {
        Some(b) => b,
        // Only reachable when every sweep produced a NaN error.
        None => (
            f64::NAN,
            trace.len(),
            Snapshot {
                factors,
                grids: grids.iter().map(|g| g.expect("every factor updated")).collect(),
                codes,
            },
        ),
    };
    let codes = snap
        .factors
        .iter()
        .zip(snap.codes)
        .map(|(f, c)| IntTensor::new(vec![f.rows(), f.cols()], c))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedFactorSet {
        factors: FactorSet::new(snap.factors)?,
        grids: snap.grids,
        codes,
        trace,
        best_sweep,
        stopped_early,
    })
}

/// Quantized rank-`rank` factorization `X ≈ A·Bᵀ`. Each sweep updates `B`
/// (with `G = AᵀA`, `K = XᵀA`) and then `A`.
pub fn quantized_matrix_factorization(
    x: &Matrix,
    rank: usize,
    cfg: &AdmmConfig,
    init: &FactorSet,
) -> Result<QuantizedFactorSet> {
    quantized_matrix_factorization_observed(x, rank, cfg, init, &mut Silent)
}

pub fn quantized_matrix_factorization_observed(
    x: &Matrix,
    rank: usize,
    cfg: &AdmmConfig,
    init: &FactorSet,
    observer: &mut dyn InnerObserver,
) -> Result<QuantizedFactorSet> {
    alternate(&x.to_tensor(), rank, &[1, 0], cfg, init, observer)
}

/// Quantized 3-way CP decomposition; factors are updated in the order
/// A, B, C within every sweep.
pub fn quantized_cpd(
    t: &DenseTensor,
    rank: usize,
    cfg: &AdmmConfig,
    init: &FactorSet,
) -> Result<QuantizedFactorSet> {
    quantized_cpd_observed(t, rank, cfg, init, &mut Silent)
}

pub fn quantized_cpd_observed(
    t: &DenseTensor,
    rank: usize,
    cfg: &AdmmConfig,
    init: &FactorSet,
    observer: &mut dyn InnerObserver,
) -> Result<QuantizedFactorSet> {
    if t.ndim() != 3 {
        return Err(Error::UnsupportedOrder(t.ndim(), "3"));
    }
    alternate(t, rank, &[0, 1, 2], cfg, init, observer)
}

/// Dispatches on tensor order: matrix factorization for 2-way input,
/// [`quantized_cpd`] for 3-way.
pub fn quantized_factorize(
    t: &DenseTensor,
    rank: usize,
    cfg: &AdmmConfig,
    init: &FactorSet,
) -> Result<QuantizedFactorSet> {
    match t.ndim() {
        2 => alternate(t, rank, &[1, 0], cfg, init, &mut Silent),
        3 => alternate(t, rank, &[0, 1, 2], cfg, init, &mut Silent),
        n => Err(Error::UnsupportedOrder(n, "2 or 3")),
    }
}
