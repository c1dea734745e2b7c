//! Seeded synthetic low-rank tensors for experiments and fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quant::{check_bits, code_max, code_min};
use crate::tensor::{reconstruct, rel_error, DenseTensor, FactorSet, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub shape: Vec<usize>,
    pub rank: usize,
    /// Noise norm relative to the clean tensor norm.
    pub noise: f64,
    /// When set, factors are drawn as integer codes on a `bits`-bit grid.
    pub grid_bits: Option<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub tensor: DenseTensor,
    pub truth: FactorSet,
    /// Relative error of the generating factors against `tensor`.
    pub floor: f64,
}

/// Grid factors hold codes in `[−2^(b−1), 2^(b−1) − 1]` times `2^(1−b)`,
/// with both extreme codes present in every factor. Such a factor is a fixed
/// point of the asymmetric MinMax projection.
fn grid_factor(rng: &mut ChaCha8Rng, rows: usize, rank: usize, bits: u32) -> Matrix {
    let (lo, hi) = (code_min(bits), code_max(bits));
    let step = (2.0f64).powi(1 - bits as i32);
    let mut codes: Vec<i32> = (0..rows * rank).map(|_| rng.random_range(lo..=hi)).collect();
    if codes.len() >= 2 {
        let p = rng.random_range(0..codes.len());
        let mut q = rng.random_range(0..codes.len() - 1);
        if q >= p {
            q += 1;
        }
        codes[p] = lo;
        codes[q] = hi;
    }
    Matrix::from_vec(rows, rank, codes.into_iter().map(|c| f64::from(c) * step).collect())
        .expect("sized above")
}

pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    if !(2..=3).contains(&spec.shape.len()) {
        return Err(Error::UnsupportedOrder(spec.shape.len(), "2 or 3"));
    }
    if spec.rank == 0 {
        return Err(Error::ZeroRank);
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise must be non-negative, got {}", spec.noise)));
    }
    if let Some(b) = spec.grid_bits {
        check_bits(b)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let factors: Vec<Matrix> = spec
        .shape
        .iter()
        .map(|&n| match spec.grid_bits {
            Some(bits) => grid_factor(&mut rng, n, spec.rank, bits),
            None => Matrix::from_fn(n, spec.rank, |_, _| StandardNormal.sample(&mut rng)),
        })
        .collect();
    let truth = FactorSet::new(factors)?;
    let clean = reconstruct(&truth, &spec.shape)?;

    let mut tensor = clean.clone();
    if spec.noise > 0.0 {
        let noise: Vec<f64> = (0..clean.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        let factor = spec.noise * clean.frobenius_norm() / nn;
        for (x, e) in tensor.data_mut().iter_mut().zip(&noise) {
            *x += factor * e;
        }
    }
    let floor = match rel_error(&tensor, &clean) {
        Ok(v) => v,
        Err(Error::ZeroNorm) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(Synthetic { tensor, truth, floor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{project_values, QuantScheme};

    #[test]
    fn same_seed_same_tensor() {
        let spec = SyntheticSpec {
            shape: vec![5, 4, 3],
            rank: 2,
            noise: 0.01,
            grid_bits: None,
            seed: 9,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.tensor, b.tensor);
    }

    #[test]
    fn noise_level_matches_request() {
        let spec = SyntheticSpec {
            shape: vec![8, 8, 8],
            rank: 3,
            noise: 0.01,
            grid_bits: None,
            seed: 1,
        };
        let s = generate(&spec).unwrap();
        // ‖E‖ = 0.01‖X‖ and ‖X + E‖ differs from ‖X‖ by at most ‖E‖
        assert!((s.floor - 0.01).abs() < 0.01 * 0.011);
    }

    #[test]
    fn grid_factors_are_projection_fixed_points() {
        let spec = SyntheticSpec {
            shape: vec![6, 5, 4],
            rank: 2,
            noise: 0.0,
            grid_bits: Some(4),
            seed: 3,
        };
        let s = generate(&spec).unwrap();
        assert_eq!(s.floor, 0.0);
        for f in s.truth.factors() {
            let p = project_values(f.data(), 4, QuantScheme::minmax(false)).unwrap();
            assert_eq!(p.values, f.data());
        }
    }
}
