use std::fmt;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, manifests or schedules (exit 2).
    Config(String),
    /// Numerical failure inside an estimator or the sampler (exit 3).
    Numeric(String),
    /// Filesystem or serialisation failure (exit 4).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<zvcv::Error> for CliError {
    fn from(e: zvcv::Error) -> Self {
        use zvcv::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidInput(_) | E::InvalidSchedule(_) | E::BasisTooLarge { .. } => CliError::Config(msg),
            E::InsufficientSamples { .. }
            | E::DomainError { .. }
            | E::ConvergenceError { .. }
            | E::ConditioningError { .. }
            | E::DegenerateWeights { .. }
            | E::TemperatureStall { .. } => CliError::Numeric(msg),
            E::Io(_) | E::Csv(_) | E::Json(_) => CliError::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
