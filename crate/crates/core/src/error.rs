use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate spectrum: estimated range [{lo}, {hi}] is too narrow to normalize")]
    DegenerateSpectrum { lo: f64, hi: f64 },

    #[error("block weight w[{class}][{cross}] is zero; within-block weights are undefined")]
    ZeroBlockWeight { class: usize, cross: usize },

    #[error("{what} of size {size} exceeds the dense limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("tridiagonal eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by the numbers themselves rather than by
    /// configuration or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSpectrum { .. }
                | Error::ZeroBlockWeight { .. }
                | Error::NoConvergence(_)
                | Error::Numeric(_)
                | Error::Divergence { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Format(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
