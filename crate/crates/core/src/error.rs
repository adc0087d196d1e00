use thiserror::Error;

/// Errors surfaced by every layer of the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular or ill-conditioned (condition estimate {cond:e})")]
    SingularMatrix { cond: f64 },
    #[error("numerical blow-up: {0}")]
    NumericalBlowup(String),
    #[error("design infeasible: {0}")]
    DesignInfeasible(String),
    #[error("no feasible point with gamma <= {gamma_max}")]
    InfeasibleAtUpperBound { gamma_max: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("sampled constant failed validation: {0}")]
    ValidationFailed(String),
    #[error("protocol certificate rejected: {0}")]
    CertificateRejected(String),
}

pub type Result<T> = std::result::Result<T, Error>;
