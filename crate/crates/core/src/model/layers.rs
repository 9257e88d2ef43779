use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, GraphError, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{EncoderKind, ModelConfig};

pub(crate) fn init_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let a = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

fn put<T: Scalar>(g: &mut Graph<T>, t: &Arc<Tensor<T>>, hot: bool) -> NodeId {
    if hot {
        g.leaf_shared(t)
    } else {
        g.constant_shared(t)
    }
}

/// Affine map on row vectors: `x [m, in] -> x W + b`, `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Linear<T> {
    pub w: Arc<Tensor<T>>,
    pub b: Arc<Tensor<T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl LinearNodes {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, GraphError> {
        let h = g.matmul(x, self.w)?;
        g.add(h, self.b)
    }
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self::new(
            init_uniform(&[fan_in, fan_out], fan_in, rng),
            init_uniform(&[fan_out], fan_in, rng),
        )
    }

    pub fn new(w: Tensor<T>, b: Tensor<T>) -> Self {
        Self {
            w: Arc::new(w),
            b: Arc::new(b),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn nodes(&self, g: &mut Graph<T>, hot: bool) -> LinearNodes {
        LinearNodes {
            w: put(g, &self.w, hot),
            b: put(g, &self.b, hot),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 2] {
        [&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [Arc::make_mut(&mut self.w), Arc::make_mut(&mut self.b)]
    }
}

/// Dimension-preserving two-layer adapter: `act(act(x W1 + b1) W2 + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Adapter<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterNodes {
    pub fc1: LinearNodes,
    pub fc2: LinearNodes,
    pub activation: Activation,
}

impl AdapterNodes {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, GraphError> {
        let a1 = self.fc1.forward(g, x)?;
        let h1 = g.apply(self.activation.op(), &[a1])?;
        let a2 = self.fc2.forward(g, h1)?;
        g.apply(self.activation.op(), &[a2])
    }
}

impl<T: Scalar> Adapter<T> {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            fc1: Linear::init(dim, hidden, rng),
            fc2: Linear::init(hidden, dim, rng),
            activation,
        }
    }

    pub fn nodes(&self, g: &mut Graph<T>, hot: bool) -> AdapterNodes {
        AdapterNodes {
            fc1: self.fc1.nodes(g, hot),
            fc2: self.fc2.nodes(g, hot),
            activation: self.activation,
        }
    }

    /// `[w1, b1, w2, b2]`
    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.fc1.w, &self.fc1.b, &self.fc2.w, &self.fc2.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        let [w1, b1] = self.fc1.tensors_mut();
        let [w2, b2] = self.fc2.tensors_mut();
        [w1, b1, w2, b2]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        z
    }

    pub fn from_nodes_grads(&self, nodes: &AdapterNodes, grads: &crate::autodiff::Gradients<T>) -> Self {
        let lin = |n: &LinearNodes| Linear::new(grads.wrt(n.w).clone(), grads.wrt(n.b).clone());
        Self {
            fc1: lin(&nodes.fc1),
            fc2: lin(&nodes.fc2),
            activation: self.activation,
        }
    }
}

/// 3x3 (or 1x1) same-padded convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Conv<T> {
    pub kernel: Arc<Tensor<T>>,
    pub bias: Arc<Tensor<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn init<R: Rng + ?Sized>(cin: usize, cout: usize, size: usize, rng: &mut R) -> Self {
        let fan_in = cin * size * size;
        Self {
            kernel: Arc::new(init_uniform(&[cout, cin, size, size], fan_in, rng)),
            bias: Arc::new(init_uniform(&[cout], fan_in, rng)),
        }
    }

    fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, GraphError> {
        let k = g.constant_shared(&self.kernel);
        let b = g.constant_shared(&self.bias);
        g.conv2d(x, k, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResBlock<T> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    /// 1x1 projection on the skip path when channel counts differ.
    pub proj: Option<Conv<T>>,
}

/// Frozen image encoder weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ImageEncoder<T> {
    pub kind: EncoderKind,
    pub convs: Vec<Conv<T>>,
    pub blocks: Vec<ResBlock<T>>,
    pub head: Linear<T>,
}

impl<T: Scalar> ImageEncoder<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let [c, h, w] = cfg.image_shape();
        let ch = cfg.conv_channels;
        let kind = cfg.encoder.kind;
        let mut convs = Vec::new();
        let mut blocks = Vec::new();
        let mut cin = c;
        for _ in 0..kind.conv_blocks() {
            convs.push(Conv::init(cin, ch, 3, rng));
            cin = ch;
        }
        for _ in 0..kind.res_blocks() {
            blocks.push(ResBlock {
                conv1: Conv::init(cin, ch, 3, rng),
                conv2: Conv::init(ch, ch, 3, rng),
                proj: (cin != ch).then(|| Conv::init(cin, ch, 1, rng)),
            });
            cin = ch;
        }
        let flat = cin * h * w;
        Self {
            kind,
            convs,
            blocks,
            head: Linear::init(flat, cfg.encoder.feature_dim, rng),
        }
    }

    /// Raw (pre-adapter, unnormalized) feature `[1, feature_dim]` of an
    /// image node of shape `[c, h, w]`.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, GraphError> {
        let mut h = x;
        for conv in &self.convs {
            let z = conv.forward(g, h)?;
            h = g.relu(z)?;
        }
        for block in &self.blocks {
            let a = block.conv1.forward(g, h)?;
            let a = g.relu(a)?;
            let b = block.conv2.forward(g, a)?;
            let skip = match &block.proj {
                Some(p) => p.forward(g, h)?,
                None => h,
            };
            let s = g.add(b, skip)?;
            h = g.relu(s)?;
        }
        let flat = g.as_row(h)?;
        let head = self.head.nodes(g, false);
        head.forward(g, flat)
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = Vec::new();
        for c in &self.convs {
            out.extend([&*c.kernel, &*c.bias]);
        }
        for b in &self.blocks {
            out.extend([&*b.conv1.kernel, &*b.conv1.bias, &*b.conv2.kernel, &*b.conv2.bias]);
            if let Some(p) = &b.proj {
                out.extend([&*p.kernel, &*p.bias]);
            }
        }
        out.extend(self.head.tensors());
        out
    }

    pub fn head_mut(&mut self) -> &mut Linear<T> {
        &mut self.head
    }
}

/// Frozen text tower: token embeddings, mean pooling, relu MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TextEncoder<T> {
    /// `[table_size, embed_dim]`
    pub embedding: Arc<Tensor<T>>,
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> TextEncoder<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, table_size: usize, rng: &mut R) -> Self {
        let e = cfg.embed_dim;
        // An embedding is a linear map of one-hot tokens: fan-in 1.
        let embedding = Arc::new(init_uniform(&[table_size, e], 1, rng));
        let mut layers = Vec::with_capacity(cfg.text_layers);
        let mut din = e;
        for i in 0..cfg.text_layers {
            let dout = if i + 1 == cfg.text_layers {
                cfg.encoder.feature_dim
            } else {
                cfg.text_hidden
            };
            layers.push(Linear::init(din, dout, rng));
            din = dout;
        }
        Self { embedding, layers }
    }

    /// Embedding rows for a token sequence, `[n, embed_dim]`.
    pub fn embed(&self, tokens: &[usize]) -> Tensor<T> {
        let e = self.embedding.shape()[1];
        let data = tokens.iter().flat_map(|&t| self.embedding.row(t).iter().copied()).collect();
        Tensor::new(vec![tokens.len(), e], data).expect("embedding rows")
    }

    /// MLP on pooled token rows `[m, embed_dim] -> [m, feature_dim]`.
    pub fn mlp(&self, g: &mut Graph<T>, pooled: NodeId) -> Result<NodeId, GraphError> {
        let mut h = pooled;
        for (i, layer) in self.layers.iter().enumerate() {
            let nodes = layer.nodes(g, false);
            h = nodes.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = vec![&self.embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out
    }
}
