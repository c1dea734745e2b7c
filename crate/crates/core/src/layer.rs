//! Layer plumbing: kernel reshaping, the three-stage factorized convolution,
//! rank selection and MAC / BOP accounting.
//!
//! Convolutions are stride 1 with "same" zero padding `D / 2` and odd square
//! kernels `D × D`. Bias is not part of the numeric pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{rel_error, DenseTensor, FactorSet, Matrix};

/// Dimensions of a layer's weight, independent of the input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Linear { out_features: usize, in_features: usize },
    Conv { out_channels: usize, in_channels: usize, kernel: usize },
}

impl LayerShape {
    pub fn params(&self) -> u64 {
        match *self {
            LayerShape::Linear { out_features, in_features } => (out_features * in_features) as u64,
            LayerShape::Conv { out_channels, in_channels, kernel } => {
                (out_channels * in_channels * kernel * kernel) as u64
            }
        }
    }

    /// Sum of the extents of the factorized weight: `n + m` or `n + m + k`.
    pub fn factor_extent(&self) -> u64 {
        match *self {
            LayerShape::Linear { out_features, in_features } => (out_features + in_features) as u64,
            LayerShape::Conv { out_channels, in_channels, kernel } => {
                (out_channels + in_channels + kernel * kernel) as u64
            }
        }
    }

    pub fn factorized_params(&self, rank: usize) -> u64 {
        rank as u64 * self.factor_extent()
    }
}

/// Convolution with its input spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvLayerSpec {
    pub fn new(out_channels: usize, in_channels: usize, kernel: usize, height: usize, width: usize) -> Result<Self> {
        if [out_channels, in_channels, kernel, height, width].contains(&0) {
            return Err(Error::InvalidConfig("layer dimensions must be at least 1".into()));
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("kernel size {kernel} is not odd")));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            height,
            width,
        })
    }

    pub fn shape(&self) -> LayerShape {
        LayerShape::Conv {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Linear { out_features: usize, in_features: usize },
    Conv(ConvLayerSpec),
}

impl LayerSpec {
    pub fn shape(&self) -> LayerShape {
        match *self {
            LayerSpec::Linear { out_features, in_features } => LayerShape::Linear { out_features, in_features },
            LayerSpec::Conv(c) => c.shape(),
        }
    }

    fn positions(&self) -> u64 {
        match self {
            LayerSpec::Linear { .. } => 1,
            LayerSpec::Conv(c) => (c.height * c.width) as u64,
        }
    }
}

/// Rank for a target parameter reduction `rate`:
/// `floor(N / (n + m [+ k]) / rate)`, at least 1.
pub fn select_rank(shape: &LayerShape, rate: f64) -> Result<usize> {
    rank_for_rate(shape.params(), shape.factor_extent(), rate)
}

/// [`select_rank`] for the weight tensor itself: a matrix is treated as a
/// linear layer, a 3-way tensor as a reshaped convolution `n × m × k`.
pub fn select_rank_for_shape(shape: &[usize], rate: f64) -> Result<usize> {
    let params: usize = shape.iter().product();
    let extent: usize = shape.iter().sum();
    rank_for_rate(params as u64, extent as u64, rate)
}

fn rank_for_rate(params: u64, extent: u64, rate: f64) -> Result<usize> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidConfig(format!("reduction rate must be positive, got {rate}")));
    }
    let r = params as f64 / extent as f64 / rate;
    Ok((r.floor() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BopReport {
    pub macs: u64,
    pub b_w: u32,
    pub b_a: u32,
    pub bops: u64,
    pub params_before: u64,
    pub params_after: u64,
}

/// MACs and bit operations of one layer, `BOPs = MACs · b_w · b_a`.
///
/// With `factorized_rank = Some(R)` a convolution costs
/// `(R·S + R·D² + T·R)·H·W` MACs and a linear layer `R·(in + out)`.
pub fn bop_count(layer: &LayerSpec, b_w: u32, b_a: u32, factorized_rank: Option<usize>) -> Result<BopReport> {
    for b in [b_w, b_a] {
        if !(2..=32).contains(&b) {
            return Err(Error::InvalidBits(b, "2..=32"));
        }
    }
    let shape = layer.shape();
    let params_before = shape.params();
    let per_position = match factorized_rank {
        None => params_before,
        Some(0) => return Err(Error::ZeroRank),
        Some(r) => shape.factorized_params(r),
    };
    let macs = per_position * layer.positions();
    Ok(BopReport {
        macs,
        b_w,
        b_a,
        bops: macs * u64::from(b_w) * u64::from(b_a),
        params_before,
        params_after: per_position,
    })
}

/// `T×S×D×D → T×S×D²` with `k̄(t, s, j·D + i) = k(t, s, j, i)`.
pub fn reshape_kernel(k4: &DenseTensor) -> Result<DenseTensor> {
    let s = k4.shape();
    if s.len() != 4 {
        return Err(Error::UnsupportedOrder(s.len(), "4"));
    }
    if s[2] != s[3] {
        return Err(Error::ShapeMismatch(format!("non-square spatial kernel {}x{}", s[2], s[3])));
    }
    k4.reshape(&[s[0], s[1], s[2] * s[3]])
}

/// Inverse of [`reshape_kernel`].
pub fn reshape_kernel_back(k3: &DenseTensor) -> Result<DenseTensor> {
    let s = k3.shape();
    if s.len() != 3 {
        return Err(Error::UnsupportedOrder(s.len(), "3"));
    }
    let d = square_side(s[2])?;
    k3.reshape(&[s[0], s[1], d, d])
}

fn square_side(n: usize) -> Result<usize> {
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(Error::ShapeMismatch(format!("{n} is not a square spatial extent")));
    }
    Ok(d)
}

/// Weights of the pointwise → depthwise → pointwise replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedConvWeights {
    /// `R × S` pointwise input projection.
    pub first: Matrix,
    /// `D × D × R` depthwise kernels; channel `r` uses slice `[.., .., r]`.
    pub mid: DenseTensor,
    /// `T × R` pointwise output projection.
    pub last: Matrix,
}

impl FactorizedConvWeights {
    pub fn new(first: Matrix, mid: DenseTensor, last: Matrix) -> Result<Self> {
        let r = first.rows();
        let ms = mid.shape();
        if ms.len() != 3 || ms[0] != ms[1] || ms[2] != r || last.cols() != r || r == 0 {
            return Err(Error::ShapeMismatch(format!(
                "first {:?}, mid {:?}, last {:?}",
                first.shape(),
                ms,
                last.shape()
            )));
        }
        if ms[0] % 2 == 0 {
            return Err(Error::InvalidConfig(format!("kernel size {} is not odd", ms[0])));
        }
        Ok(Self { first, mid, last })
    }

    /// From CP factors of the reshaped kernel `T × S × D²`, ordered
    /// `[K^t, K^s, K̄^dd]`.
    pub fn from_cp(fs: &FactorSet) -> Result<Self> {
        if fs.len() != 3 {
            return Err(Error::UnsupportedOrder(fs.len(), "3"));
        }
        let dd = fs.factor(2);
        let d = square_side(dd.rows())?;
        // K^dd(j, i, r) = K̄^dd(j·D + i, r): identical row-major layout.
        let mid = DenseTensor::new(vec![d, d, fs.rank()], dd.data().to_vec())?;
        Self::new(fs.factor(1).transpose(), mid, fs.factor(0).clone())
    }

    /// Two-factor form of a `T × S` pointwise layer `W ≈ K^t·K^sᵀ`.
    pub fn from_pointwise(last: Matrix, input: &Matrix) -> Result<Self> {
        let r = last.cols();
        let mid = DenseTensor::new(vec![1, 1, r], vec![1.0; r])?;
        Self::new(input.transpose(), mid, last)
    }

    pub fn rank(&self) -> usize {
        self.first.rows()
    }

    pub fn kernel_size(&self) -> usize {
        self.mid.shape()[0]
    }

    /// The equivalent `T × S × D × D` kernel.
    pub fn kernel(&self) -> DenseTensor {
        let (t, s, d, r) = (self.last.rows(), self.first.cols(), self.kernel_size(), self.rank());
        let mid = self.mid.data();
        DenseTensor::from_fn(&[t, s, d, d], |ix| {
            (0..r)
                .map(|q| mid[(ix[2] * d + ix[3]) * r + q] * self.first[(q, ix[1])] * self.last[(ix[0], q)])
                .sum()
        })
        .expect("valid shape")
    }
}

fn check_input(x: &DenseTensor, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 3 || s[0] != channels {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} for a layer with {channels} input channels",
            s
        )));
    }
    Ok((s[1], s[2]))
}

/// Reference stride-1 same-padded convolution of `x` (`S×H×W`) by `k4`
/// (`T×S×D×D`).
pub fn direct_conv(k4: &DenseTensor, x: &DenseTensor) -> Result<DenseTensor> {
    let ks = k4.shape();
    if ks.len() != 4 || ks[2] != ks[3] || ks[2] % 2 == 0 {
        return Err(Error::ShapeMismatch(format!("kernel {:?} is not T×S×D×D with odd D", ks)));
    }
    let (t_out, s_in, d) = (ks[0], ks[1], ks[2]);
    let (h, w) = check_input(x, s_in)?;
    let delta = (d / 2) as isize;
    let kd = k4.data();
    let xd = x.data();
    let mut out = vec![0.0; t_out * h * w];
    for t in 0..t_out {
        for hp in 0..h {
            for wp in 0..w {
                let mut acc = 0.0;
                for s in 0..s_in {
                    for j in 0..d {
                        let hh = hp as isize + j as isize - delta;
                        if hh < 0 || hh >= h as isize {
                            continue;
                        }
                        for i in 0..d {
                            let ww = wp as isize + i as isize - delta;
                            if ww < 0 || ww >= w as isize {
                                continue;
                            }
                            acc += kd[((t * s_in + s) * d + j) * d + i] * xd[(s * h + hh as usize) * w + ww as usize];
                        }
                    }
                }
                out[(t * h + hp) * w + wp] = acc;
            }
        }
    }
    DenseTensor::new(vec![t_out, h, w], out)
}

/// Pointwise `S → R`, depthwise `D×D` per channel, pointwise `R → T`.
pub fn factorized_forward(wts: &FactorizedConvWeights, x: &DenseTensor) -> Result<DenseTensor> {
    let (r, s_in, t_out, d) = (wts.rank(), wts.first.cols(), wts.last.rows(), wts.kernel_size());
    let (h, w) = check_input(x, s_in)?;
    let hw = h * w;
    let xd = x.data();

    let mut z1 = vec![0.0; r * hw];
    for q in 0..r {
        let dst = &mut z1[q * hw..(q + 1) * hw];
        for s in 0..s_in {
            let c = wts.first[(q, s)];
            for (o, v) in dst.iter_mut().zip(&xd[s * hw..(s + 1) * hw]) {
                *o += c * v;
            }
        }
    }

    let delta = (d / 2) as isize;
    let mid = wts.mid.data();
    let mut z2 = vec![0.0; r * hw];
    for q in 0..r {
        for hp in 0..h {
            for wp in 0..w {
                let mut acc = 0.0;
                for j in 0..d {
                    let hh = hp as isize + j as isize - delta;
                    if hh < 0 || hh >= h as isize {
                        continue;
                    }
                    for i in 0..d {
                        let ww = wp as isize + i as isize - delta;
                        if ww < 0 || ww >= w as isize {
                            continue;
                        }
                        acc += mid[(j * d + i) * r + q] * z1[q * hw + hh as usize * w + ww as usize];
                    }
                }
                z2[q * hw + hp * w + wp] = acc;
            }
        }
    }

    let mut y = vec![0.0; t_out * hw];
    for t in 0..t_out {
        let dst = &mut y[t * hw..(t + 1) * hw];
        for q in 0..r {
            let c = wts.last[(t, q)];
            for (o, v) in dst.iter_mut().zip(&z2[q * hw..(q + 1) * hw]) {
                *o += c * v;
            }
        }
    }
    DenseTensor::new(vec![t_out, h, w], y)
}

/// Relative deviation `‖factorized − direct‖ / ‖direct‖` of the two forward
/// passes on a seeded standard-normal `S × height × width` input, where the
/// direct pass uses the original kernel `k4`.
pub fn probe_deviation(
    k4: &DenseTensor,
    wts: &FactorizedConvWeights,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<f64> {
    let s_in = wts.first.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DenseTensor::from_fn(&[s_in, height, width], |_| StandardNormal.sample(&mut rng))?;
    let reference = direct_conv(k4, &x)?;
    let approx = factorized_forward(wts, &x)?;
    rel_error(&reference, &approx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_rank_examples() {
        let conv = LayerShape::Conv { out_channels: 64, in_channels: 64, kernel: 3 };
        assert_eq!(select_rank(&conv, 2.0).unwrap(), 134);
        let lin = LayerShape::Linear { out_features: 100, in_features: 200 };
        assert_eq!(select_rank(&lin, 2.0).unwrap(), 33);
        let tiny = LayerShape::Linear { out_features: 1, in_features: 1 };
        assert_eq!(select_rank(&tiny, 10.0).unwrap(), 1);
        assert!(select_rank(&lin, 0.0).is_err());
    }

    #[test]
    fn bop_count_resnet_block() {
        let spec = LayerSpec::Conv(ConvLayerSpec::new(64, 64, 3, 56, 56).unwrap());
        let rep = bop_count(&spec, 4, 8, None).unwrap();
        assert_eq!(rep.macs, 115_605_504);
        assert_eq!(rep.bops, 3_699_376_128);
        let full = bop_count(&spec, 32, 32, None).unwrap();
        assert_eq!(full.bops, 1024 * full.macs);
        assert!(bop_count(&spec, 1, 8, None).is_err());
        assert!(bop_count(&spec, 4, 33, None).is_err());
    }

    #[test]
    fn conv_spec_rejects_even_kernel() {
        assert!(ConvLayerSpec::new(4, 4, 2, 8, 8).is_err());
        assert!(ConvLayerSpec::new(0, 4, 3, 8, 8).is_err());
    }

    #[test]
    fn reshape_kernel_flattens_spatial() {
        let k = DenseTensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let r = reshape_kernel(&k).unwrap();
        assert_eq!(r.shape(), &[1, 1, 9]);
        assert_eq!(r.data(), (0..9).map(f64::from).collect::<Vec<_>>().as_slice());
        assert_eq!(reshape_kernel_back(&r).unwrap(), k);
        let bad = DenseTensor::zeros(&[1, 1, 3, 2]).unwrap();
        assert!(reshape_kernel(&bad).is_err());
    }

    #[test]
    fn identity_and_delta_kernels() {
        let x = DenseTensor::from_fn(&[2, 4, 5], |ix| (ix[0] * 20 + ix[1] * 5 + ix[2]) as f64).unwrap();
        let id1 = DenseTensor::from_fn(&[2, 2, 1, 1], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(direct_conv(&id1, &x).unwrap(), x);
        let delta = DenseTensor::from_fn(&[2, 2, 3, 3], |ix| {
            if ix[0] == ix[1] && ix[2] == 1 && ix[3] == 1 { 1.0 } else { 0.0 }
        })
        .unwrap();
        assert_eq!(direct_conv(&delta, &x).unwrap(), x);
    }

    #[test]
    fn zero_input_zero_output() {
        let first = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let mid = DenseTensor::from_fn(&[3, 3, 2], |ix| ix[0] as f64 - ix[1] as f64).unwrap();
        let last = Matrix::from_fn(4, 2, |i, j| i as f64 * 0.5 - j as f64);
        let w = FactorizedConvWeights::new(first, mid, last).unwrap();
        let x = DenseTensor::zeros(&[3, 5, 5]).unwrap();
        let y = factorized_forward(&w, &x).unwrap();
        assert_eq!(y.shape(), &[4, 5, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(factorized_forward(&w, &DenseTensor::zeros(&[2, 5, 5]).unwrap()).is_err());
    }

    #[test]
    fn pointwise_case_is_two_matrix_maps() {
        let last = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, -1.0], &[3.0, 1.0]]);
        let input = Matrix::from_rows(&[&[0.5, 1.0], &[-2.0, 0.0]]);
        let w = FactorizedConvWeights::from_pointwise(last.clone(), &input).unwrap();
        let x = DenseTensor::from_fn(&[2, 2, 3], |ix| (ix[0] + 2 * ix[1] + ix[2]) as f64).unwrap();
        let y = factorized_forward(&w, &x).unwrap();
        let wm = last.matmul_t(&input).unwrap();
        let xm = Matrix::from_vec(2, 6, x.data().to_vec()).unwrap();
        assert_eq!(y.data(), wm.matmul(&xm).unwrap().data());
    }
}
