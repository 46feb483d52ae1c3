use thiserror::Error;

/// Errors raised by the identification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("subsystem index {index} out of range (have {count} subsystems)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("time {t} precedes the start time {t0}")]
    BeforeStart { t: f64, t0: f64 },

    #[error("invalid switching schedule: {0}")]
    InvalidSchedule(String),

    #[error("off-grid event at t = {time} (dt = {dt})")]
    OffGridEvent { time: f64, dt: f64 },

    #[error("switching event at t = {time} lies inside the step [{start}, {end}]")]
    EventInsideStep { time: f64, start: f64, end: f64 },

    #[error("invalid input signal: {0}")]
    InvalidInput(String),

    #[error("non-finite {what} at t = {t}")]
    NonFinite { what: String, t: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("learning gain must be symmetric positive definite")]
    GainNotPositiveDefinite,

    #[error("excitation not yet detected for subsystem {subsystem}")]
    NotDetected { subsystem: usize },

    #[error("switching term active for subsystem {subsystem} but no snapshot was recorded")]
    MissingSnapshot { subsystem: usize },

    #[error("decay fit needs at least two samples above the numerical floor, got {0}")]
    InsufficientSamples(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(what: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch {
        what,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
