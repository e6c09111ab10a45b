use thiserror::Error;

/// Errors raised by the engine and its supporting modules.
#[derive(Debug, Error)]
pub enum ClaError {
    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("parse error at row {row}, column `{column}`: cannot parse {value:?}")]
    Parse { row: usize, column: String, value: String },

    #[error("period `{period}` has no securities")]
    EmptyPeriod { period: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("too few rows for training: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("insufficient periods: need at least {needed}, got {got}")]
    InsufficientPeriods { needed: usize, got: usize },

    #[error("missing realized return for security `{security}` in period `{period}`")]
    MissingReturn { security: String, period: String },

    #[error("at period `{period}`: {source}")]
    AtPeriod {
        period: String,
        #[source]
        source: Box<ClaError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ClaError {
    pub fn at_period(self, period: impl Into<String>) -> Self {
        ClaError::AtPeriod { period: period.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = ClaError> = std::result::Result<T, E>;
