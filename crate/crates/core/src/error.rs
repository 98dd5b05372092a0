use thiserror::Error;

/// Errors produced by the estimators, solvers and the sampler.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} at coordinate {coord} is outside the domain of the {map} transform")]
    DomainError {
        map: &'static str,
        coord: usize,
        value: f64,
    },

    #[error("polynomial basis has {rows} rows, exceeding the cap of {cap}")]
    BasisTooLarge { rows: u128, cap: usize },

    #[error("coordinate descent did not converge after {iterations} sweeps (max change {max_change:.3e})")]
    ConvergenceError { iterations: usize, max_change: f64 },

    #[error("kernel system could not be factorised after {attempts} jitter increases")]
    ConditioningError { attempts: usize },

    #[error("all importance weights underflowed at inverse temperature {temperature}")]
    DegenerateWeights { temperature: f64 },

    #[error("temperature step below {min_step:e} from t = {from}")]
    TemperatureStall { from: f64, min_step: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
