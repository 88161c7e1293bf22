use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (jitter escalated to {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("level {level} out of range for categorical variable {variable} (levels 1..={levels})")]
    LevelOutOfRange {
        variable: usize,
        level: usize,
        levels: usize,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),

    #[error("natural-gradient step rejected after {0} halvings")]
    StepRejected(usize),

    #[error("round-trip mismatch at {0}")]
    RoundTripMismatch(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("unsupported artifact format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("data error at row {row}, column {column}: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NonFinite(_)
                | Error::AllRestartsFailed(_)
                | Error::StepRejected(_)
        )
    }

    /// Short stable code for machine-parseable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NOT_POSITIVE_DEFINITE",
            Error::NonFinite(_) => "NON_FINITE",
            Error::DimensionMismatch(_) => "DIMENSION_MISMATCH",
            Error::LevelOutOfRange { .. } => "LEVEL_OUT_OF_RANGE",
            Error::InvalidSchema(_) => "INVALID_SCHEMA",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::AllRestartsFailed(_) => "ALL_RESTARTS_FAILED",
            Error::StepRejected(_) => "STEP_REJECTED",
            Error::RoundTripMismatch(_) => "ROUNDTRIP_MISMATCH",
            Error::InvariantViolation(_) => "INVARIANT_VIOLATION",
            Error::UnsupportedVersion { .. } => "UNSUPPORTED_VERSION",
            Error::Data { .. } => "DATA",
            Error::Csv(_) => "CSV",
            Error::Json(_) => "JSON",
            Error::Io(_) => "IO",
        }
    }
}
