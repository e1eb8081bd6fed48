use thiserror::Error;

/// Errors produced by the deconvolution toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: expected {expected}x{expected}, got {got}x{got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("psf is not on the probability simplex (sum = {sum}, min = {min})")]
    NotOnSimplex { sum: f64, min: f64 },

    #[error("numerical failure at outer iteration {iteration}: {what}")]
    Numerical { iteration: usize, what: String },
}

pub type Result<T> = std::result::Result<T, Error>;
