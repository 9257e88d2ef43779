//! Reverse-mode automatic differentiation on an append-only tensor graph.

mod activation;
mod check;
mod graph;
mod primitive;

pub use activation::{activation_derivatives, Activation};
pub use check::{central_difference, grad_check};
pub use graph::{Gradients, Graph, Instr, NodeId, NodeKind};
pub use primitive::{Op, OpParams, PRIMITIVE_NAMES};

pub(crate) use primitive::{dot, softmax, softmax_minus_onehot};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("{primitive}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        primitive: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{primitive}: invalid input of shape {shape:?}: {reason}")]
    InvalidInput {
        primitive: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{primitive} takes {expected} inputs, got {got}")]
    Arity {
        primitive: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{primitive} requires a parameter")]
    MissingParam { primitive: &'static str },
    #[error("unknown primitive {0:?}")]
    UnknownPrimitive(String),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("cyclic graph: node {node} consumes node {input}, which does not precede it")]
    Cycle { node: usize, input: usize },
    #[error("output has shape {0:?}; a seed is required for non-scalar outputs")]
    NonScalar(Vec<usize>),
    #[error("seed shape {got:?} does not match output shape {expected:?}")]
    SeedShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("activation {0:?} is not twice differentiable; second-derivative expressions need softplus")]
    NotTwiceDifferentiable(String),
    #[error("unknown activation {0:?}")]
    UnknownActivation(String),
}
