use std::process::ExitCode;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// A command needs artifacts from an earlier command that are missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("{0} run(s) failed; see manifest.json")]
    RunFailures(usize),

    #[error(transparent)]
    Core(#[from] fairlens::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Dependency(_) => 3,
            CliError::RunFailures(_) => 4,
            _ => 1,
        })
    }
}
