use crate::config::ConfigError;
use crate::dataio::DataError;
use crate::ndnum::NdError;
use crate::seqnet::ModelParams;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] NdError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerics: {0}")]
    Numerics(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration: {0}")]
    Mismatch(String),
    /// Training hit a non-finite loss; `last_good` holds the parameters before that step.
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, last_good: Box<ModelParams> },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
