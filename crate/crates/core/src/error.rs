use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("coils overlap: minimum filament distance {distance:.3e} m is below wire radius sum {limit:.3e} m")]
    Overlap { distance: f64, limit: f64 },
    #[error("degenerate impedance: {0}")]
    DegenerateImpedance(&'static str),
    #[error("unsupported modulation: {0}")]
    UnsupportedRate(String),
    #[error("preamble correlation {correlation:.3} below sync threshold {threshold:.3}")]
    SyncFailure { correlation: f64, threshold: f64 },
    #[error("rank-deficient calibration input: {0}")]
    RankDeficient(&'static str),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}
