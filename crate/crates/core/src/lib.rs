//! Gradient-inversion attacks on parameter-efficient fine-tuning of
//! CLIP-like classifiers, with a small reverse-mode autodiff engine.

pub mod attack;
pub mod autodiff;
pub mod client;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Graph, GraphError, NodeId, Op};
pub use client::{client_step, ClientError, LeakedUpdate};
pub use scalar::Scalar;
pub use tensor::{Tensor, TensorError};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Model64 = model::MultimodalModel<f64>;
pub type Model32 = model::MultimodalModel<f32>;
pub type Peft64 = model::PeftParams<f64>;
pub type Leak64 = client::LeakedUpdate<f64>;
