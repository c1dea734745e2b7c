//! Quantization-aware CP factorization.
//!
//! Matrix and 3-way CP decompositions whose factor entries lie exactly on a
//! uniform quantization grid, computed with alternating ADMM, plus the layer
//! plumbing used to compress convolution and linear weights.

pub mod admm;
pub mod bench;
pub mod cpd;
pub mod error;
pub mod io;
pub mod layer;
pub mod linalg;
pub mod quant;
pub mod synth;
pub mod tensor;

pub use admm::{
    admm_factor_update, e_quant, quantize_factors, quantized_cpd, quantized_factorize,
    quantized_matrix_factorization, AdmmConfig, AdmmState, QuantizedFactorSet, SweepRecord,
};
pub use cpd::{balance_factors, cp_als, init_for_admm, AlsConfig, InitMode};
pub use error::{Error, Result};
pub use quant::{
    dequantize, minmax_grid, mse_grid, project, quantize, IntTensor, QuantGrid, QuantMethod,
    QuantScheme,
};
pub use tensor::{fold, gram, khatri_rao, mttkrp, reconstruct, rel_error, unfold, DenseTensor, FactorSet, Matrix};
