use std::path::PathBuf;

use thiserror::Error;

/// A single failed check, tagged with the config key or entry it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch for {what}: expected length {expected}, found {found}")]
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("state is not feasible at period {period}: class {class} still holds {residual} kWh past its deadline")]
    InfeasibleState {
        period: usize,
        class: usize,
        residual: f64,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("{}:{row}:{column}: {message}", path.display())]
    Ingest {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("unknown consumer id {0}")]
    UnknownMember(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{} validation error(s):\n{}", .0.len(), render_violations(.0))]
    Validation(Vec<Violation>),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code, printed by the CLI next to the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "E_DOMAIN",
            Error::Shape { .. } => "E_SHAPE",
            Error::InfeasibleState { .. } => "E_INFEASIBLE_STATE",
            Error::Unsupported(_) => "E_UNSUPPORTED",
            Error::Ingest { .. } => "E_INGEST",
            Error::Consistency(_) => "E_CONSISTENCY",
            Error::UnknownMember(_) => "E_UNKNOWN_MEMBER",
            Error::InvalidParameter(_) => "E_PARAMETER",
            Error::Parse { .. } => "E_PARSE",
            Error::Validation(_) => "E_VALIDATION",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn render_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
