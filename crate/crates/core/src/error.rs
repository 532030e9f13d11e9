use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("integral diverges: {0}")]
    Divergent(String),
    #[error("quadrature did not converge (estimate {estimate:e}, error {error:e})")]
    Quadrature { estimate: f64, error: f64 },
    #[error("could not bracket root from {lo} after {expansions} expansions (last point {last})")]
    Bracketing { lo: f64, last: f64, expansions: usize },
    #[error("sampler normalizer {normalizer:e} disagrees with w = {w:e}")]
    Normalizer { normalizer: f64, w: f64 },
    #[error("step budget of {0} exhausted before stopping")]
    MaxSteps(u64),
    #[error("{0}")]
    Gamma(String),
    #[error("config: {0}")]
    Config(String),
    #[error("gate failure: {0}")]
    Gate(String),
    #[error("oracle infeasible: {0}")]
    OracleInfeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
