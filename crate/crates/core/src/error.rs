use crate::netmodel::Violation;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at byte {offset}: {what}")]
    ParseBinary { offset: usize, what: String },

    #[error("parse error at line {line}: {what}")]
    ParseText { line: usize, what: String },

    #[error("invalid network: {}", crate::error::join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("receptive field undefined: kernel sizes are not uniform")]
    NonUniformKernel,

    #[error("capacity exceeded: need {needed} {what}, {available} available")]
    Capacity {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no classes learned yet")]
    NoClasses,

    #[error("{0}")]
    InvalidArgument(String),
}

pub(crate) fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
