//! Length-aware conditional transformer shared by the non-autoregressive and
//! autoregressive decoders. Both are the same code with a different attention
//! pattern and objective, trained as separate parameter sets.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_MAGIC};
pub use forward::{
    embed_regions, embed_tokens, forward, forward_ar, forward_nar, forward_nar_batch, logits, Attention, TextOffset,
};
pub use params::{layout, BlockIds, Bound, Init, Layout, ModelConfig, ModelParams, ParamId, ParamSpec, INIT_STD};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}
