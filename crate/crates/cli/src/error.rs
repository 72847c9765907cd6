use tacstack::belief_filter::BeliefError;
use tacstack::dataset::DatasetError;
use tacstack::estimator::EstimatorError;
use tacstack::sim_env::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Sensor(_) | DatasetError::Geometry(_) | DatasetError::InvalidRange(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Config(_) => CliError::Config(e.to_string()),
            EstimatorError::NumericFailure { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Estimator(inner) => inner.into(),
            SimError::Belief(BeliefError::NonFinite) => CliError::Numeric(e.to_string()),
            SimError::Belief(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
