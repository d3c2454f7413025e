use thiserror::Error;

use crate::ingest::ParseError;

/// The error type shared by every module of the crate.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("bit sequence must contain at least one bit")]
    EmptySequence,
    #[error("lag {lag} is invalid for a sequence of {len} bits (need 1 <= lag < len)")]
    InvalidLag { lag: usize, len: usize },
    #[error("bias {bias} gives a zero-variance statistic")]
    DegenerateVariance { bias: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("exact enumeration is limited to n <= {max}, got n = {n}")]
    SizeLimit { n: usize, max: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("matrix shape error: {0}")]
    Shape(String),
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("need at least 3 complete pairs, got {0}")]
    InsufficientData(usize),
    #[error("rank correlation undefined: {0}")]
    UndefinedCorrelation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
