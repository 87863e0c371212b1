use thiserror::Error;

/// Errors produced anywhere in the risk pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A data row could not be parsed.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    /// The input is missing required columns or carries unknown ones.
    #[error("schema error: {0}")]
    Schema(String),

    /// A configuration value violates its documented invariants.
    #[error("invalid config: {0}")]
    Config(String),

    /// Inputs have mismatched shapes or violate a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical procedure failed (divergence, degenerate range, singular system).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => 1,
            Error::Parse { .. } | Error::Schema(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

impl Error {
    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Schema(m) => Error::Schema(format!("{stage}: {m}")),
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::InvalidInput(m) => Error::InvalidInput(format!("{stage}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{stage}: {message}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
