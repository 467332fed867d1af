use thiserror::Error;

use crate::gan::LossReport;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("epoch {epoch} out of range 0..{total}")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("empty batch in {0}")]
    EmptyBatch(&'static str),

    #[error("length mismatch in {op}: {left} vs {right}")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dataset must contain both labels")]
    SingleDomain,

    #[error("domain {0} is empty")]
    EmptyDomain(&'static str),

    #[error("invalid label {0}; expected -1 or +1")]
    InvalidLabel(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("distance magnitude must be nonnegative, got {0}")]
    NegativeMagnitude(f64),

    #[error("{direction:?} is not a valid direction for {kind:?} conditioning")]
    InvalidDirection {
        kind: crate::geometry::DistanceKind,
        direction: crate::geometry::Direction,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at step {step}: {snapshot:?}")]
    NonFiniteLoss { step: usize, snapshot: Box<LossReport> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
