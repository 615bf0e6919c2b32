use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Errors surfaced by the algorithmic core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("parameter {0:?} lies outside the prior support")]
    OutsideSupport(Vec<f64>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("malformed model parameters: {0}")]
    Malformed(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
