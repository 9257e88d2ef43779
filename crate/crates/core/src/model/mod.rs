//! The victim classifier: frozen image and text towers, PEFT parameters
//! and the scaled-cosine logits `Y = LS * IF * TF^T`.

mod config;
mod layers;
mod multimodal;
mod tokenizer;

pub use config::{EncoderKind, EncoderStructure, ModelConfig, PeftMode, DIGIT_NAMES};
pub use layers::{Adapter, AdapterNodes, Conv, ImageEncoder, Linear, LinearNodes, ResBlock, TextEncoder};
pub use multimodal::{
    logits, loss, loss_grad, FrozenWeights, MultimodalModel, PeftNodes, PeftParams, MODEL_FORMAT_VERSION,
};
pub use tokenizer::{Tokenizer, HASH_BUCKETS};

use crate::autodiff::GraphError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("class name {0} is empty")]
    EmptyClassName(usize),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("image has shape {got:?}, the encoder expects {expected:?}")]
    ImageShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0} adapters are not twice differentiable; the double-adapter mode needs softplus")]
    NotTwiceDifferentiable(&'static str),
    #[error("{0}")]
    Structure(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
