use tactis_core::data::DataError;
use tactis_core::metrics::MetricError;
use tactis_core::ModelError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }

    /// `error[kind]: message` on one line.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.kind(), self.message().replace('\n', " "))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let m = e.to_string();
        match e {
            ModelError::Config(_) | ModelError::Invalid(_) => CliError::Config(m),
            ModelError::Data(_)
            | ModelError::Metric(_)
            | ModelError::EmptyBatch
            | ModelError::Shape(_)
            | ModelError::SeriesId { .. }
            | ModelError::Unaligned
            | ModelError::NoMissingTokens => CliError::Data(m),
            ModelError::Tensor(_)
            | ModelError::OutsideUnitInterval(_)
            | ModelError::EmptyMemory
            | ModelError::Diverged { .. } => CliError::Numerical(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}
