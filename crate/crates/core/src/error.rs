use thiserror::Error;

/// Errors produced by the localization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("ray origin ({x:.3}, {y:.3}) lies in an occupied cell")]
    OriginOccupied { x: f64, y: f64 },

    #[error("scan has {bearings} bearings but {ranges} ranges")]
    ScanLengthMismatch { bearings: usize, ranges: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("all sample weights are zero")]
    ZeroWeights,

    #[error("requested an empty sample set")]
    EmptyRequest,

    #[error("no grid exceeded the weight threshold; the observation matched nowhere")]
    EmptyThresholdSet,

    #[error("species needs at least {needed} samples, has {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("fitness must be positive, got {0}")]
    ZeroFitness(f64),

    #[error("every species went extinct at step {0}")]
    AllExtinct(usize),

    #[error("goal ({x:.2}, {y:.2}) is unreachable from the start pose")]
    UnreachableGoal { x: f64, y: f64 },

    #[error("wrong filter variant: expected {expected}, state holds {actual}")]
    WrongVariant {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
