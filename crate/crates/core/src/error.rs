use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("vocabulary error: id {id} out of range [0, {size})")]
    Vocab { id: usize, size: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: u64, batch: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
