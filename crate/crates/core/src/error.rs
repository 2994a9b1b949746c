use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Problem too large for the requested engine.
    #[error("size error: {0}")]
    Size(String),

    /// Operation not available for this kernel or geometry.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Iterative scheme failed to converge; the trajectory is attached.
    #[error("no convergence after {iterations} iterations: {context}")]
    Convergence {
        context: String,
        iterations: usize,
        trajectory: Vec<f64>,
    },

    /// Functional is flat in its argument and has no unique minimizer.
    #[error("degenerate functional: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn size(msg: impl Into<String>) -> Self {
        Error::Size(msg.into())
    }

    /// Wrap the message with the name of the failing stage.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            Error::Size(m) => Error::Size(format!("{ctx}: {m}")),
            Error::Unsupported(m) => Error::Unsupported(format!("{ctx}: {m}")),
            Error::Convergence {
                context,
                iterations,
                trajectory,
            } => Error::Convergence {
                context: format!("{ctx}: {context}"),
                iterations,
                trajectory,
            },
            Error::Degenerate(m) => Error::Degenerate(format!("{ctx}: {m}")),
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{ctx}: {message}"),
            },
            Error::Io(m) => Error::Io(format!("{ctx}: {m}")),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
