use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Cholesky pivot fell below the singularity threshold.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not Hermitian (entry ({row}, {col}) off by {deviation:e})")]
    NotHermitian { row: usize, col: usize, deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The beamformer is identically zero, so the feasibility scaling is undefined.
    #[error("degenerate input: beamformer is identically zero")]
    DegenerateBeamformer,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("refused: {0}")]
    SizeGuard(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at iteration {iteration}, sample {sample}")]
    NonFinite { iteration: usize, sample: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
