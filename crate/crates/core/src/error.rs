use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration produced a non-finite value at node {node}")]
    IntegrationDiverged { node: usize },

    #[error("time {tau} is outside the grid range [{t0}, {t1}]")]
    OutOfRange { tau: f64, t0: f64, t1: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("quaternion norm {norm} deviates from 1 by more than 1e-6")]
    InvalidQuaternion { norm: f64 },

    #[error("optimal control solve stalled: residual {residual:.3e} after {iterations} iterations")]
    MaxIterationsExceeded { iterations: usize, residual: f64 },

    #[error("line search failed to decrease the objective at solver iteration {iteration}")]
    NonDescent { iteration: usize },

    #[error("H_uu is singular at node {node} (smallest singular value {sigma_min:.3e})")]
    HuuSingular { node: usize, sigma_min: f64 },

    #[error("Riccati solution blew up at node {node} (norm {norm:.3e})")]
    RiccatiBlowup { node: usize, norm: f64 },

    #[error("non-finite coefficient matrix at node {node}")]
    NonFiniteCoefficient { node: usize },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("projection could not restore an admissible warp after {halvings} halvings")]
    ProjectionFailed { halvings: usize },

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("config error in field '{field}': {message}")]
    Config { field: String, message: String },

    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("finite-difference probe on coordinate {coordinate}: {source}")]
    Probe {
        coordinate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the inner optimal control machinery (as opposed to
    /// configuration or I/O problems).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::Outer { source, .. } | Error::Probe { source, .. } => source.is_solver_failure(),
            Error::IntegrationDiverged { .. }
            | Error::MaxIterationsExceeded { .. }
            | Error::NonDescent { .. }
            | Error::HuuSingular { .. }
            | Error::RiccatiBlowup { .. }
            | Error::NonFiniteCoefficient { .. }
            | Error::ProjectionFailed { .. } => true,
            _ => false,
        }
    }
}
