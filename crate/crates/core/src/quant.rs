//! Uniform per-tensor quantization.
//!
//! A [`QuantGrid`] with `b` bits, step `scale` and zero-point `z` represents
//! the finite set `{ scale·(k − z) : k ∈ [−2^(b−1), 2^(b−1) − 1] }`.
//! Rounding is half-to-even throughout.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 8;

/// First and last clipping ratio of the MSE range search, in hundredths.
const MSE_ALPHA_MIN: u32 = 20;
const MSE_ALPHA_MAX: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantGrid {
    bits: u32,
    scale: f64,
    zero_point: i32,
    symmetric: bool,
}

impl QuantGrid {
    pub fn new(bits: u32, scale: f64, zero_point: i32, symmetric: bool) -> Result<Self> {
        check_bits(bits)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidGrid(format!("scale must be positive, got {scale}")));
        }
        if symmetric && zero_point != 0 {
            return Err(Error::InvalidGrid(format!(
                "symmetric grid with zero-point {zero_point}"
            )));
        }
        Ok(Self {
            bits,
            scale,
            zero_point,
            symmetric,
        })
    }

    pub fn symmetric(bits: u32, scale: f64) -> Result<Self> {
        Self::new(bits, scale, 0, true)
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn zero_point(&self) -> i32 {
        self.zero_point
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn code_min(&self) -> i32 {
        code_min(self.bits)
    }

    #[inline]
    pub fn code_max(&self) -> i32 {
        code_max(self.bits)
    }

    /// Integer code for one value: `clip(round_half_even(x/scale) + z)`.
    ///
    /// The rounded quotient is checked against its neighbours so the result
    /// is the node nearest to `x` in computed distance even when the division
    /// itself rounds across a midpoint. Equidistant nodes resolve to the even
    /// `code − z`.
    #[inline]
    pub fn encode(&self, x: f64) -> i32 {
        let (lo, hi) = (self.code_min(), self.code_max());
        let t = x / self.scale;
        let r = t.round_ties_even();
        let k = (r + f64::from(self.zero_point)).clamp(f64::from(lo), f64::from(hi)) as i32;
        if ((t - r).abs() - 0.5).abs() > 4.0 * f64::EPSILON * t.abs().max(1.0) {
            return k;
        }
        let mut best = (k, (x - self.decode(k)).abs());
        for c in [k - 1, k + 1] {
            if c < lo || c > hi {
                continue;
            }
            let d = (x - self.decode(c)).abs();
            if d < best.1 || (d == best.1 && (c - self.zero_point) % 2 == 0) {
                best = (c, d);
            }
        }
        best.0
    }

    /// Real value of a code: `scale·(code − z)`. The code is not range-checked.
    #[inline]
    pub fn decode(&self, code: i32) -> f64 {
        self.scale * f64::from(code - self.zero_point)
    }

    /// Nearest grid node to `x`.
    #[inline]
    pub fn snap(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }

    /// All `2^b` grid values in increasing order.
    pub fn nodes(&self) -> Vec<f64> {
        (self.code_min()..=self.code_max())
            .map(|k| self.decode(k))
            .collect()
    }

    fn check_code(&self, code: i32) -> Result<()> {
        if code < self.code_min() || code > self.code_max() {
            return Err(Error::CodeOutOfRange {
                code,
                min: self.code_min(),
                max: self.code_max(),
            });
        }
        Ok(())
    }
}

#[inline]
pub fn code_min(bits: u32) -> i32 {
    -(1 << (bits - 1))
}

#[inline]
pub fn code_max(bits: u32) -> i32 {
    (1 << (bits - 1)) - 1
}

pub fn check_bits(bits: u32) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidBits(bits, "2..=8"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantMethod {
    MinMax,
    MseMinMax,
}

/// Grid-selection rule: how scale and zero-point are derived from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantScheme {
    method: QuantMethod,
    symmetric: bool,
}

impl QuantScheme {
    pub fn minmax(symmetric: bool) -> Self {
        Self {
            method: QuantMethod::MinMax,
            symmetric,
        }
    }

    /// MSE range search; always symmetric.
    pub fn mse() -> Self {
        Self {
            method: QuantMethod::MseMinMax,
            symmetric: true,
        }
    }

    pub fn new(method: QuantMethod, symmetric: bool) -> Result<Self> {
        if method == QuantMethod::MseMinMax && !symmetric {
            return Err(Error::InvalidConfig(
                "MSE range search is only defined for symmetric grids".into(),
            ));
        }
        Ok(Self { method, symmetric })
    }

    #[inline]
    pub fn method(&self) -> QuantMethod {
        self.method
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Builds the grid for `values` under this scheme.
    ///
    /// The MSE search has no defined result for an all-zero input; here that
    /// case falls back to the degenerate unit grid so projections of zero
    /// factors stay zero.
    pub fn grid_for(&self, values: &[f64], bits: u32) -> Result<QuantGrid> {
        match self.method {
            QuantMethod::MinMax => minmax_grid_values(values, bits, self.symmetric),
            QuantMethod::MseMinMax => match mse_grid_values(values, bits) {
                Err(Error::AllZero) => QuantGrid::symmetric(bits, 1.0),
                other => other,
            },
        }
    }
}

/// Integer codes plus the shape they were taken from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    shape: Vec<usize>,
    codes: Vec<i32>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, codes: Vec<i32>) -> Result<Self> {
        if shape.iter().product::<usize>() != codes.len() {
            return Err(Error::DataLength {
                shape,
                len: codes.len(),
            });
        }
        Ok(Self { shape, codes })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn codes(&self) -> &[i32] {
        &self.codes
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn levels(bits: u32) -> f64 {
    f64::from((1u32 << bits) - 1)
}

pub(crate) fn minmax_grid_values(values: &[f64], bits: u32, symmetric: bool) -> Result<QuantGrid> {
    check_bits(bits)?;
    if values.is_empty() {
        return Err(Error::InvalidConfig("cannot build a grid for no values".into()));
    }
    if symmetric {
        let m = max_abs(values);
        if m == 0.0 {
            return QuantGrid::symmetric(bits, 1.0);
        }
        QuantGrid::symmetric(bits, 2.0 * m / levels(bits))
    } else {
        let (lo, hi) = min_max(values);
        if hi == lo {
            return QuantGrid::new(bits, 1.0, 0, false);
        }
        let scale = (hi - lo) / levels(bits);
        let z = code_min(bits) - (lo / scale).round_ties_even() as i32;
        QuantGrid::new(bits, scale, z, false)
    }
}

/// Sum of squared reconstruction errors of `values` on `grid`.
pub(crate) fn sq_error(values: &[f64], grid: &QuantGrid) -> f64 {
    values
        .iter()
        .map(|&x| {
            let d = x - grid.snap(x);
            d * d
        })
        .sum()
}

pub(crate) fn mse_grid_values(values: &[f64], bits: u32) -> Result<QuantGrid> {
    check_bits(bits)?;
    let m = max_abs(values);
    if m == 0.0 {
        return Err(Error::AllZero);
    }
    let mut best: Option<(f64, QuantGrid)> = None;
    // Largest ratio first so that ties keep the wider range.
    for pct in (MSE_ALPHA_MIN..=MSE_ALPHA_MAX).rev() {
        let q_max = f64::from(pct) / 100.0 * m;
        let grid = QuantGrid::symmetric(bits, 2.0 * q_max / levels(bits))?;
        let err = sq_error(values, &grid);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, grid));
        }
    }
    Ok(best.expect("candidate set is non-empty").1)
}

/// Grid from the data range.
///
/// Symmetric: `scale = 2·max|x| / (2^b − 1)`, `z = 0`. Asymmetric:
/// `scale = (max − min) / (2^b − 1)` and `z = −2^(b−1) − round(min/scale)` so
/// the minimum lands on the lowest code. A zero range yields `scale = 1,
/// z = 0`.
pub fn minmax_grid(x: &DenseTensor, bits: u32, symmetric: bool) -> Result<QuantGrid> {
    minmax_grid_values(x.data(), bits, symmetric)
}

/// Symmetric grid whose clipping range `q_max = α·max|x|` minimizes the
/// squared reconstruction error over `α ∈ {0.20, 0.21, …, 1.00}`.
pub fn mse_grid(x: &DenseTensor, bits: u32) -> Result<QuantGrid> {
    mse_grid_values(x.data(), bits)
}

pub fn quantize(x: &DenseTensor, grid: &QuantGrid) -> IntTensor {
    IntTensor {
        shape: x.shape().to_vec(),
        codes: x.data().iter().map(|&v| grid.encode(v)).collect(),
    }
}

pub fn dequantize(q: &IntTensor, grid: &QuantGrid) -> Result<DenseTensor> {
    let mut data = Vec::with_capacity(q.codes.len());
    for &c in &q.codes {
        grid.check_code(c)?;
        data.push(grid.decode(c));
    }
    DenseTensor::new(q.shape.clone(), data)
}

/// Result of projecting a flat slice onto its own data-derived grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Vec<f64>,
    pub codes: Vec<i32>,
    pub grid: QuantGrid,
}

/// Builds the grid for `values` and snaps every element to its nearest node.
pub fn project_values(values: &[f64], bits: u32, scheme: QuantScheme) -> Result<Projection> {
    let grid = scheme.grid_for(values, bits)?;
    let codes: Vec<i32> = values.iter().map(|&v| grid.encode(v)).collect();
    let values = codes.iter().map(|&c| grid.decode(c)).collect();
    Ok(Projection {
        values,
        codes,
        grid,
    })
}

/// Projection onto the quantization set: `dequantize(quantize(x, grid))` with
/// the grid derived from `x` itself.
pub fn project(x: &DenseTensor, bits: u32, scheme: QuantScheme) -> Result<(DenseTensor, QuantGrid)> {
    let p = project_values(x.data(), bits, scheme)?;
    Ok((DenseTensor::new(x.shape().to_vec(), p.values)?, p.grid))
}
