use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite: smallest eigenvalue {min_eig}")]
    NotSpd { min_eig: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {offdiag}, matrix norm {norm})")]
    EigNoConvergence {
        sweeps: usize,
        offdiag: f64,
        norm: f64,
    },

    #[error("iteration did not converge after {iters} iterations (last residual {residual})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("malformed data at {location}: {message}")]
    Format { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
