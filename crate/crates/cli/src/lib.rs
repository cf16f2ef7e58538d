//! Command-line orchestration: configuration, solve, analyze, reports.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod report;
pub mod verify;

use ckn_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("solver blow-up: {0}")]
    BlowUp(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Core(CoreError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 config or schema, 3 blow-up, 4 I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Schema(_) => 2,
            CliError::BlowUp(_) => 3,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                CoreError::InvalidGrid(_) | CoreError::Configuration(_) | CoreError::ExponentCondition { .. } => 2,
                CoreError::BlowUp { .. } | CoreError::CflViolation { .. } => 3,
                CoreError::Io(_) | CoreError::Format { .. } => 4,
                _ => 1,
            },
            CliError::Failed(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
