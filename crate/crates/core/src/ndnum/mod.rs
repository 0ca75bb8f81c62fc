//! Dense f64 tensors with define-by-run reverse-mode differentiation.
//!
//! The primitive set is deliberately small: exactly what the social
//! extractor, the temporal convolutions and the Gaussian head need.

mod checkpoint;
mod ops;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use ops::Primitive;
pub use params::{finite_diff_check, sgd_step, FiniteDiffReport, ParamSet};
pub use tape::{Gradients, Tape};
pub use tensor::{NodeRef, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NdError {
    #[error("{kind}: shape mismatch: {detail}")]
    Shape { kind: &'static str, detail: String },
    #[error("tensor is recorded on tape {found}, expected tape {expected}")]
    Tape { expected: u64, found: u64 },
    #[error("expected a single-element tensor, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("tensor is not tracked by any tape")]
    Untracked,
    #[error("no parameter named {0:?}")]
    MissingParam(String),
    #[error("numerics: {0}")]
    Numerics(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
