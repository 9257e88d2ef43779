use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::primitive::{sigmoid, softplus, softplus_second};
use super::{GraphError, Op};

/// Pointwise nonlinearity used by encoders and adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn parse(name: &str) -> Result<Self, GraphError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            _ => Err(GraphError::UnknownActivation(name.to_string())),
        }
    }

    pub fn op<T: Scalar>(self) -> Op<T> {
        match self {
            Activation::Relu => Op::Relu,
            Activation::Softplus => Op::Softplus,
        }
    }

    /// Whether the derivative itself is available as a graph primitive.
    pub fn is_twice_differentiable(self) -> bool {
        matches!(self, Activation::Softplus)
    }

    /// Primitive computing the activation's first derivative.
    pub fn derivative_op<T: Scalar>(self) -> Result<Op<T>, GraphError> {
        match self {
            Activation::Softplus => Ok(Op::SoftplusPrime),
            Activation::Relu => Err(GraphError::NotTwiceDifferentiable(self.name().into())),
        }
    }
}

/// Elementwise `(σ(x), σ'(x), σ''(x))`. Only softplus qualifies.
pub fn activation_derivatives<T: Scalar>(
    name: &str,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), GraphError> {
    let act = Activation::parse(name)?;
    if !act.is_twice_differentiable() {
        return Err(GraphError::NotTwiceDifferentiable(act.name().into()));
    }
    Ok((x.map(softplus), x.map(sigmoid), x.map(softplus_second)))
}
