use thiserror::Error;

/// Errors produced by the traceprint library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: {0}")]
    CoordinateRange(String),

    #[error("bearing is undefined between coincident points")]
    UndefinedBearing,

    #[error("point has no timestamp but a finite temporal scale was requested")]
    MissingTimestamp,

    #[error("invalid temporal scale: {0}")]
    InvalidScale(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no eligible users: {0}")]
    NoEligibleUsers(String),

    #[error("invalid sample set: {0}")]
    InvalidSampleSet(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
