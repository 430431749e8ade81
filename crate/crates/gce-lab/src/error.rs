//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands had incompatible shapes for an op.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A single-operand shape violated an op's precondition.
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        expected: String,
    },
    /// An op produced a non-finite element.
    NonFinite { op: &'static str },
    /// `backward` was called on a tensor with more than one element.
    BackwardNonScalar { numel: usize },
    /// `backward` was called twice on the same root without a reset.
    BackwardTwice,
    /// Invalid argument outside the tensor engine (configs, budgets, ...).
    InvalidArgument(String),
    /// A dataset, checkpoint, or config file failed to parse.
    Format(String),
    /// Training aborted because the loss or a gradient went non-finite.
    Diverged(String),
    /// Filesystem failure, with the offending path.
    Io { path: PathBuf, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::BadShape {
                op,
                shape,
                expected,
            } => write!(f, "{op}: bad shape {shape:?}, expected {expected}"),
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite element"),
            Error::BackwardNonScalar { numel } => {
                write!(f, "backward requires a scalar, got {numel} elements")
            }
            Error::BackwardTwice => write!(f, "backward already ran on this root"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Diverged(msg) => write!(f, "training diverged: {msg}"),
            Error::Io { path, message } => write!(f, "{}: {message}", path.display()),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
