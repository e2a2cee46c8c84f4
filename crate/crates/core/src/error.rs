use alloc::string::String;

use crate::autodiff::TensorError;
use crate::data::DataError;
use crate::metrics::MetricError;

/// Errors raised by the model, training and evaluation code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape error: {0}")]
    Shape(&'static str),
    #[error("series id {id} is outside the {known} series known to the model")]
    SeriesId { id: usize, known: usize },
    #[error("the temporal encoder needs aligned time stamps")]
    Unaligned,
    #[error("window has no missing tokens")]
    NoMissingTokens,
    #[error("value {0} lies outside the unit interval")]
    OutsideUnitInterval(f64),
    #[error("conditioner memory is empty for a non-first permutation element")]
    EmptyMemory,
    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss {loss}")]
    Diverged { epoch: usize, iteration: usize, loss: f64 },
}
