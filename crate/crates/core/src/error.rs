use thiserror::Error;

/// Errors raised by the estimators, solvers and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    Symmetry { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("singular matrix (pivot magnitude {pivot:e})")]
    Singular { pivot: f64 },

    #[error("unstable dynamics: {0}")]
    Unstable(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("insufficient excitation: Gram matrix still singular after {samples} samples")]
    InsufficientExcitation { samples: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("Fisher information is numerically singular (eigenvalue ratio {ratio:e})")]
    SingularFisher { ratio: f64 },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
