use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metric is singular or not positive definite at {point:?}")]
    SingularMetric { point: Vec<f64> },

    #[error("critical point of the constraint function: |grad f| = {norm:e} at {point:?}")]
    CriticalPoint { point: Vec<f64>, norm: f64 },

    #[error("point {point:?} is outside the chart domain: {reason}")]
    Domain { point: Vec<f64>, reason: String },

    #[error("g' underflows at s = {probe:e}; use the declared alpha")]
    Underflow { probe: f64 },

    #[error("step size collapsed to {step:e} at t = {t}")]
    StepSizeCollapse { t: f64, step: f64 },

    #[error("projection onto f = 0 failed: |f| = {residual:e} after {iterations} iterations")]
    ProjectionFailure { residual: f64, iterations: usize },

    #[error("velocity is not tangent to the constraint: normal component {normal:e}")]
    NonTangentialVelocity { normal: f64 },

    #[error("averaging window {window} is invalid: {reason}")]
    InvalidWindow { window: f64, reason: String },

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularMetric { .. } => "singular_metric",
            Error::CriticalPoint { .. } => "critical_point",
            Error::Domain { .. } => "domain",
            Error::Underflow { .. } => "underflow",
            Error::StepSizeCollapse { .. } => "step_size_collapse",
            Error::ProjectionFailure { .. } => "projection_failure",
            Error::NonTangentialVelocity { .. } => "non_tangential_velocity",
            Error::InvalidWindow { .. } => "invalid_window",
            Error::UnknownScenario(_) => "unknown_scenario",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::UnknownScenario(_)
                | Error::Validation(_)
                | Error::Parse(_)
                | Error::InvalidWindow { .. }
                | Error::Domain { .. }
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
