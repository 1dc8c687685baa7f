use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("stationarity violation: {0}")]
    Stationarity(String),

    #[error("undefined covariate: {0}")]
    UndefinedCovariate(String),

    #[error("missing calibration: {0}")]
    MissingCalibration(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag used in error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyDataset => "empty_dataset",
            Error::Stationarity(_) => "stationarity",
            Error::UndefinedCovariate(_) => "undefined_covariate",
            Error::MissingCalibration(_) => "missing_calibration",
            Error::Parse { .. } => "parse",
            Error::Estimation(_) => "estimation",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
