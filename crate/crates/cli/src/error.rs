use serde::Serialize;
use thiserror::Error;
use traceprint::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

#[derive(Serialize)]
struct Record<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON error record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Record { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() })
            .expect("serializable")
    }

    /// Data problems surface as input errors; everything else is a runtime
    /// failure.
    pub fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::Parse { .. }
            | CoreError::Csv(_)
            | CoreError::Io(_)
            | CoreError::Schema(_)
            | CoreError::EmptyInput(_)
            | CoreError::CoordinateRange(_)
            | CoreError::MissingTimestamp
            | CoreError::InvalidTrajectory(_)
            | CoreError::InvalidDataset(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
