use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite vehicle state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("control sample at t = {t} out of bounds (throttle {throttle}, steering {steering})")]
    ControlOutOfBounds { t: f64, throttle: f64, steering: f64 },

    #[error("control timestamps must be strictly increasing (t = {t})")]
    ControlOrder { t: f64 },

    #[error("no control sample at or before t = {t}")]
    ControlUnavailable { t: f64 },

    #[error("rotation angle {angle} too close to pi for a well-conditioned logarithm")]
    NearPiRotation { angle: f64 },

    #[error("factor evaluation failed: {0}")]
    FactorEvaluationFailure(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("frame at t = {t} is not newer than the current newest frame (t = {newest})")]
    OutOfOrderFrame { t: f64, newest: f64 },

    #[error("steering input {steering} at t = {t} violates the forward-motion bound")]
    NotForwardMotion { t: f64, steering: f64 },

    #[error("trajectory is empty after trimming the standing-still tail")]
    EmptyAfterTrim,

    #[error("trajectory alignment failed: {0}")]
    AlignmentFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("file error: {0}")]
    File(String),
}

impl Error {
    /// Stable machine-readable kind, printed by the command-line tool.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::ControlOutOfBounds { .. } => "ControlOutOfBounds",
            Error::ControlOrder { .. } => "ControlOrder",
            Error::ControlUnavailable { .. } => "ControlUnavailable",
            Error::NearPiRotation { .. } => "NearPiRotation",
            Error::FactorEvaluationFailure(_) => "FactorEvaluationFailure",
            Error::SolverFailure(_) => "SolverFailure",
            Error::OutOfOrderFrame { .. } => "OutOfOrderFrame",
            Error::NotForwardMotion { .. } => "NotForwardMotion",
            Error::EmptyAfterTrim => "EmptyAfterTrim",
            Error::AlignmentFailure(_) => "AlignmentFailure",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Schema(_) => "SchemaError",
            Error::File(_) => "FileError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
