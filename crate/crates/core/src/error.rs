use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("tensor extents must be at least 1, got {0:?}")]
    EmptyExtent(Vec<usize>),

    #[error("mode {mode} out of range for a {ndim}-way tensor")]
    ModeOutOfRange { mode: usize, ndim: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("reference tensor has zero Frobenius norm")]
    ZeroNorm,

    #[error("unsupported tensor order {0}, expected {1}")]
    UnsupportedOrder(usize, &'static str),

    #[error("bit-width {0} outside the supported range {1}")]
    InvalidBits(u32, &'static str),

    #[error("invalid quantization grid: {0}")]
    InvalidGrid(String),

    #[error("code {code} outside representable range [{min}, {max}]")]
    CodeOutOfRange { code: i32, min: i32, max: i32 },

    #[error("cannot build an MSE grid for an all-zero tensor")]
    AllZero,

    #[error("rank must be at least 1")]
    ZeroRank,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
