use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor primitives, layers and the model.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("{op}: argument outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward was already run on this tape; re-run the forward pass")]
    AlreadyDifferentiated,
    #[error("gradient check failed: max relative error {max_rel_err:e} at element {index} exceeds {tol:e}")]
    GradCheck {
        max_rel_err: f64,
        index: usize,
        tol: f64,
    },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
