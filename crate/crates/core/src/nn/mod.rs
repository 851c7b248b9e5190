//! Small dense networks with reverse-mode differentiation.

mod adam;
mod checkpoint;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, load_into, save_checkpoint};
pub use mlp::Mlp;
pub use params::{Param, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("variable does not belong to this tape")]
    NoTape,
    #[error("non-finite gradient")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
