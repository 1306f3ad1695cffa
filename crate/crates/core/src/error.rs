use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("inverse marginal evaluated at phi = {phi}, above the marginal supremum {sup}")]
    MarginalDomain { phi: f64, sup: f64 },
    #[error("root bracket not found: {0}")]
    Bracket(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("shooting failed: {0}")]
    Shooting(String),
    #[error("ill-posed Merton regime: gamma_M = {0} is not positive")]
    IllPosedMerton(f64),
    #[error("finite-difference oracle: {0}")]
    FiniteDifference(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
