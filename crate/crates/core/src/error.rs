//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A single tensor has a shape the operation cannot accept.
    #[error("dimension error in {op}: shape {shape:?}: {msg}")]
    Dimension {
        op: &'static str,
        shape: Vec<usize>,
        msg: String,
    },

    /// Math domain violation (sqrt of a negative, division guard, ...).
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// Autodiff graph misuse (non-scalar root, ...).
    #[error("graph error: {0}")]
    Graph(String),

    /// A non-finite value where a finite one is required.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// Invalid argument or configuration value.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A degradation spec violating its invariants.
    #[error("degradation spec invalid: {0}")]
    Spec(String),

    /// Training aborted on a bad loss value.
    #[error("training aborted at epoch {epoch}, batch {batch}: {msg}")]
    Train {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    /// Malformed manifest, spec record or checkpoint.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }
}
