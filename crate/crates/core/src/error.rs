use thiserror::Error;

/// Errors produced by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("unsupported input behavior: {0}")]
    Behavior(String),

    #[error("invalid hyperparameters: {0}")]
    Hyperparameters(String),

    #[error("argument out of range: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {value:e}, error {error:e})")]
    Quadrature {
        value: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolveResidual { residual: f64, tolerance: f64 },

    #[error("imaginary residue {residue:e} exceeds tolerance {tolerance:e}")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("matrix exponential failed: {0}")]
    MatrixExp(String),

    #[error("invalid transfer function: {0}")]
    TransferFunction(String),

    #[error("unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("all {0} optimizer starts were infeasible")]
    AllStartsInfeasible(usize),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
