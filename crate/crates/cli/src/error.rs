use std::process::ExitCode;

use thiserror::Error;

/// Failure categories; each maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn field(name: &str, message: impl std::fmt::Display) -> Self {
        Self::Config(format!("`{name}`: {message}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Check(_) => 1,
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Solver(_) => 4,
        })
    }
}

impl From<surrogate_fem::Error> for CliError {
    fn from(e: surrogate_fem::Error) -> Self {
        use surrogate_fem::Error as E;
        match e {
            E::InvalidParameter { name, message } => Self::field(name, message),
            E::Io(e) => Self::Io(e.to_string()),
            E::Csv(e) => Self::Io(e.to_string()),
            e => Self::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
