use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Hilbert space layout: {0}")]
    InvalidSpec(String),

    #[error("sensor index {index} out of range for {sensors} sensor(s)")]
    SensorIndex { index: usize, sensors: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("effective Liouvillian is singular or degenerate (condition estimate {condition:.3e})")]
    DegenerateSteadyState { condition: f64 },

    #[error("steady state is unphysical: minimum eigenvalue {min_eigenvalue:.3e}")]
    Unphysical { min_eigenvalue: f64 },

    #[error("steady-state residual {residual:.3e} exceeds tolerance")]
    Residual { residual: f64 },

    #[error("operator is not Hermitian (deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("truncation inconsistency at outcome {index}: p = {p:.3e} but dp = {dp:.3e}")]
    TruncationInconsistency { index: usize, p: f64, dp: f64 },

    #[error("{0} is undefined")]
    Undefined(&'static str),

    #[error("truncation did not converge below the cap n_exc = {cap}")]
    NotConverged { cap: usize, trace: Vec<(usize, f64)> },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

impl Error {
    /// Short stable code used in tabular output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) | Error::InvalidConfig(_) => "E_CONFIG",
            Error::SensorIndex { .. } | Error::DimensionMismatch { .. } => "E_SHAPE",
            Error::DegenerateSteadyState { .. } => "E_DEGENERATE",
            Error::Unphysical { .. } => "E_UNPHYSICAL",
            Error::Residual { .. } => "E_RESIDUAL",
            Error::NonHermitian { .. } => "E_NON_HERMITIAN",
            Error::TruncationInconsistency { .. } => "E_TRUNCATION_INCONSISTENT",
            Error::Undefined(_) => "E_UNDEFINED",
            Error::NotConverged { .. } => "E_NOT_CONVERGED",
            Error::LinearAlgebra(_) => "E_LINALG",
        }
    }

    /// Whether the error comes from user input rather than from the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::SensorIndex { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}
