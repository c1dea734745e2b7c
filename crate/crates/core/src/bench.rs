//! Head-to-head runs on one tensor: factorize-then-quantize against the
//! joint solver from two initializations.

use std::thread;

use crate::admm::{e_quant, quantize_factors, quantized_factorize, AdmmConfig, QuantizedFactorSet};
use crate::cpd::{cp_als, init_for_admm, AlsConfig, InitMode};
use crate::error::Result;
use crate::tensor::DenseTensor;

/// ALS followed by a single projection of every factor. With zero ALS
/// sweeps the random initial draw is projected.
pub fn successive(t: &DenseTensor, als: &AlsConfig, admm: &AdmmConfig) -> Result<QuantizedFactorSet> {
    let fs = if als.max_iters == 0 {
        init_for_admm(t, als, InitMode::Random)?
    } else {
        cp_als(t, als)?
    };
    quantize_factors(&fs, admm.bits, admm.scheme)
}

/// Initialization followed by the quantized solver.
pub fn joint(t: &DenseTensor, als: &AlsConfig, admm: &AdmmConfig, init: InitMode) -> Result<QuantizedFactorSet> {
    let start = init_for_admm(t, als, init)?;
    quantized_factorize(t, als.rank, admm, &start)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub successive: QuantizedFactorSet,
    pub joint_random: QuantizedFactorSet,
    pub joint_balanced: QuantizedFactorSet,
    pub e_successive: f64,
    pub e_joint_random: f64,
    pub e_joint_balanced: f64,
}

/// Runs the three jobs concurrently; results are keyed by role, so the
/// outcome does not depend on scheduling.
pub fn compare(t: &DenseTensor, als: &AlsConfig, admm: &AdmmConfig) -> Result<Comparison> {
    let (a, b, c) = thread::scope(|s| {
        let a = s.spawn(|| successive(t, als, admm));
        let b = s.spawn(|| joint(t, als, admm, InitMode::Random));
        let c = s.spawn(|| joint(t, als, admm, InitMode::AlsBalanced));
        (
            a.join().expect("successive job panicked"),
            b.join().expect("random-init job panicked"),
            c.join().expect("balanced-init job panicked"),
        )
    });
    let (a, b, c) = (a?, b?, c?);
    Ok(Comparison {
        e_successive: e_quant(t, &a)?,
        e_joint_random: e_quant(t, &b)?,
        e_joint_balanced: e_quant(t, &c)?,
        successive: a,
        joint_random: b,
        joint_balanced: c,
    })
}
