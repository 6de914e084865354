use clp_bounds::estimators::EstimatorError;
use clp_bounds::policy::PolicyError;
use clp_bounds::problems::ProblemError;
use clp_bounds::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or input data; raised before any solver runs.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Lp(_) => CliError::Solver(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidConfig(_) | EstimatorError::Problem { .. } => CliError::Validation(e.to_string()),
            EstimatorError::Setup(inner) => inner.into(),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            PolicyError::Problem(inner) => inner.into(),
            PolicyError::Estimator(inner) => inner.into(),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            SimError::Problem(inner) => inner.into(),
            SimError::Oracle(_) => CliError::Solver(e.to_string()),
            SimError::Output(_) => CliError::Io(e.to_string()),
        }
    }
}
