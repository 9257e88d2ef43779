//! The server-side attacker: label prediction from reverse-estimated
//! text-feature gradients, then dummy-image optimization that never
//! differentiates through the text encoder.

mod config;
mod estimate;
mod objective;
mod reconstruct;

pub use config::{AttackConfig, InitDistribution, MatchingLoss, Optimizer};
pub use estimate::{
    check_compatible, estimate_text_feature_grad, estimate_tf_update, predict_label, predict_label_with_prior,
    LabelPrediction,
};
pub use objective::{
    adapter_grad_expression, add_tv, dummy_text_grad, gradient_distance, label_coefficient, matching_loss,
    soft_label_coefficient, text_grad_from_coefficient, AdapterExpr, LabelSource, MatchingObjective, ObjectiveNodes,
    TextVjp,
};
pub use reconstruct::{
    estimate_target, initial_state, optimize, reconstruct, reconstruct_raw_dlg, reconstruct_without_label_prediction,
    reference_feature, ReconstructionResult, CONVERGED_RATIO, DIVERGED_RATIO,
};

use crate::autodiff::GraphError;
use crate::client::ClientError;
use crate::model::{ModelError, PeftMode};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("leak was produced in {leak} mode but the model is in {model} mode")]
    ModeMismatch { leak: PeftMode, model: PeftMode },
    #[error("leak does not fit the model: {0}")]
    Incompatible(String),
    #[error("client learning rate must be positive, got {0}")]
    Eta(f64),
    #[error("label prediction needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("converged client step leaks no label: the text-feature gradient is zero")]
    ZeroGradient,
    #[error("{0} adapters are not twice differentiable; the adapter-gradient expression needs softplus")]
    NotTwiceDifferentiable(&'static str),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
