use thiserror::Error;

/// Errors raised by the laboratory. Numerical aborts and configuration
/// problems are distinguished so the CLI can map them onto exit codes.
#[derive(Debug, Error)]
pub enum DscError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("degenerate covariance: {0}")]
    Degenerate(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DscError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DscError::InvalidInput(msg.into())
    }

    /// True for errors that should surface as a configuration failure.
    pub fn is_config(&self) -> bool {
        matches!(self, DscError::Config { .. })
    }

    /// Prefix the message with `ctx`, keeping the variant.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            DscError::InvalidInput(m) => DscError::InvalidInput(format!("{ctx}: {m}")),
            DscError::Degenerate(m) => DscError::Degenerate(format!("{ctx}: {m}")),
            DscError::Numerical(m) => DscError::Numerical(format!("{ctx}: {m}")),
            DscError::Format(m) => DscError::Format(format!("{ctx}: {m}")),
            DscError::EmptyClass(c) => DscError::InvalidInput(format!("{ctx}: class {c} has no samples")),
            DscError::DimensionMismatch { expected, got } => {
                DscError::InvalidInput(format!("{ctx}: dimension mismatch: expected {expected}, got {got}"))
            }
            other => other,
        }
    }

    /// True for errors that represent a numerical abort during a run.
    pub fn is_numerical(&self) -> bool {
        matches!(self, DscError::Numerical(_) | DscError::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, DscError>;
