use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid system specification: {0}")]
    InvalidSpec(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("control value {value:?} at t = {t} lies outside its admissible set")]
    ControlOutOfSet { t: f64, value: Vec<f64> },

    #[error("evaluator undefined or non-finite at {point:?}")]
    DomainFailure { point: Vec<f64> },

    #[error("flow of impulse field {field} is not complete: escape near flow time {escape_time}")]
    CompletenessViolation { field: usize, escape_time: f64 },

    #[error("maximum number of steps ({steps}) exceeded at t = {t}")]
    MaxStepsExceeded { t: f64, steps: usize },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },

    #[error("time {t} outside the interval [{a}, {b}]")]
    OutOfInterval { t: f64, a: f64, b: f64 },
}

impl Error {
    /// True for errors caused by malformed input rather than numerical breakdown.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidControl(_)
                | Error::InvalidConfig(_)
                | Error::OutOfInterval { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
