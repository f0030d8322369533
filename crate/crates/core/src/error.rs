use thiserror::Error;

/// Library error type. Variants map onto the three failure classes the CLI
/// reports with distinct exit codes: configuration, I/O, and numerics.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fixture `{name}`: {reason}")]
    Fixture { name: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("power flow did not converge: max mismatch {mismatch:.3e} after {iterations} iterations")]
    PowerFlowDiverged { mismatch: f64, iterations: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CoreError::Numerical(msg.into())
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, CoreError::Config(_) | CoreError::Fixture { .. })
    }

    pub fn is_io(&self) -> bool {
        matches!(self, CoreError::Io(_) | CoreError::Csv(_) | CoreError::Json(_))
    }
}
