//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform to the op's shape rule.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An op produced NaN or Inf (checking is on by default, see `Tape::set_check_finite`).
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: String },

    /// Class index outside [0, C).
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    /// A one-hot input did not contain exactly one 1.0.
    #[error("malformed one-hot vector: {0}")]
    MalformedOneHot(String),

    #[error("backward already ran on this tape; build a fresh tape per step")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    #[error("backward: loss tensor is not recorded on this tape")]
    LossDetached,

    /// Function under finite-difference test is not deterministic.
    #[error("finite-difference check: function is not deterministic ({0} vs {1})")]
    NonDeterministicFunction(f64, f64),

    #[error("tick schedule error: {0}")]
    Schedule(String),

    #[error("memory ledger error: {0}")]
    Ledger(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: non-finite loss ({detail})")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
