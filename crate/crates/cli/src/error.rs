use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config{}: {field}: {message}", LineSuffix(*line))]
    Config {
        line: Option<usize>,
        field: String,
        message: String,
    },

    #[error("{context}: {source}")]
    Core {
        context: &'static str,
        #[source]
        source: isk_core::Error,
    },

    #[error("{0}")]
    Io(String),
}

struct LineSuffix(Option<usize>);

impl fmt::Display for LineSuffix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(l) => write!(f, " line {l}"),
            None => Ok(()),
        }
    }
}

impl CliError {
    /// 2 for numerical non-convergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core {
                source: isk_core::Error::Convergence { .. } | isk_core::Error::Degenerate(_),
                ..
            } => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Attach the failing module to a core error.
pub trait Context<T> {
    fn ctx(self, context: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for isk_core::Result<T> {
    fn ctx(self, context: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context, source })
    }
}
