//! Error taxonomy shared by the numeric core.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, CoreError>;

/// Failure classes of the numeric core.
///
/// Variants are coarse on purpose: callers dispatch on the class (shape bug,
/// misuse, bad data, numeric blow-up) and surface the message.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Tensor dimensions do not line up; the message carries both shapes.
    Shape { op: &'static str, detail: String },
    /// An operation was called in a state it does not support
    /// (stale pooling map, uninitialized running statistics, ...).
    Usage { op: &'static str, detail: String },
    /// Model or generator construction failed; names the failing stage.
    Build { detail: String },
    /// Input data violates a contract (single-class labels, empty split, ...).
    Data { detail: String },
    /// A NaN or infinity appeared where finite values are required.
    NonFinite { context: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape { op, detail } => write!(f, "{op}: shape error: {detail}"),
            CoreError::Usage { op, detail } => write!(f, "{op}: usage error: {detail}"),
            CoreError::Build { detail } => write!(f, "model construction error: {detail}"),
            CoreError::Data { detail } => write!(f, "data error: {detail}"),
            CoreError::NonFinite { context } => {
                write!(f, "non-finite value encountered: {context}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

impl CoreError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn usage(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Usage {
            op,
            detail: detail.into(),
        }
    }

    pub fn build(detail: impl Into<String>) -> Self {
        CoreError::Build {
            detail: detail.into(),
        }
    }

    pub fn data(detail: impl Into<String>) -> Self {
        CoreError::Data {
            detail: detail.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        CoreError::NonFinite {
            context: context.into(),
        }
    }
}
