use std::collections::BTreeMap;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{GraphError, Op, OpParams};

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind<T> {
    /// Differentiable input.
    Leaf,
    /// Non-differentiable input.
    Constant,
    Op { op: Op<T>, inputs: Vec<NodeId> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    kind: NodeKind<T>,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
}

/// One step of a serialized graph program, see [`Graph::replay`].
#[derive(Debug, Clone)]
pub struct Instr<T> {
    pub primitive: String,
    /// Indices into the program's node list (leaves first).
    pub inputs: Vec<usize>,
    pub params: OpParams<T>,
}

/// Append-only computation graph. Nodes can only consume earlier nodes,
/// so insertion order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: BTreeMap<NodeId, Tensor<T>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(&leaf)
    }

    /// Gradient for `leaf`. Panics if `leaf` is not a leaf of the graph.
    pub fn wrt(&self, leaf: NodeId) -> &Tensor<T> {
        self.grads
            .get(&leaf)
            .unwrap_or_else(|| panic!("node {} is not a leaf", leaf.0))
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor<T>> {
        self.grads.remove(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor<T>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    /// Operation nodes whose vector-Jacobian product was evaluated.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

macro_rules! unary {
    ($($name:ident => $op:expr),* $(,)?) => {
        $(pub fn $name(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
            self.apply($op, &[x])
        })*
    };
}

macro_rules! binary {
    ($($name:ident => $op:expr),* $(,)?) => {
        $(pub fn $name(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
            self.apply($op, &[a, b])
        })*
    };
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(NodeKind::Leaf, Arc::new(value), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(NodeKind::Constant, Arc::new(value), false)
    }

    /// Leaf backed by a shared tensor, without copying it.
    pub fn leaf_shared(&mut self, value: &Arc<Tensor<T>>) -> NodeId {
        self.push(NodeKind::Leaf, Arc::clone(value), true)
    }

    /// Constant backed by a shared tensor, without copying it.
    pub fn constant_shared(&mut self, value: &Arc<Tensor<T>>) -> NodeId {
        self.push(NodeKind::Constant, Arc::clone(value), false)
    }

    pub fn scalar_constant(&mut self, value: T) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    fn push(&mut self, kind: NodeKind<T>, value: Arc<Tensor<T>>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            kind,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>, GraphError> {
        self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id.0))
    }

    pub fn apply(&mut self, op: Op<T>, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let mut values = Vec::with_capacity(inputs.len());
        let mut requires_grad = false;
        for &id in inputs {
            let n = self.node(id)?;
            requires_grad |= n.requires_grad;
            values.push(&*n.value);
        }
        let value = Arc::new(op.forward(&values)?);
        Ok(self.push(
            NodeKind::Op {
                op,
                inputs: inputs.to_vec(),
            },
            value,
            requires_grad,
        ))
    }

    pub fn apply_named(
        &mut self,
        name: &str,
        inputs: &[NodeId],
        params: OpParams<T>,
    ) -> Result<NodeId, GraphError> {
        self.apply(Op::parse(name, params)?, inputs)
    }

    /// Rebuilds a graph from leaves plus a program. Inputs must refer to
    /// strictly earlier nodes; anything else would close a cycle.
    pub fn replay(leaves: Vec<Tensor<T>>, program: &[Instr<T>]) -> Result<(Self, Vec<NodeId>), GraphError> {
        let total = leaves.len() + program.len();
        let mut g = Self::new();
        let mut ids: Vec<NodeId> = leaves.into_iter().map(|t| g.leaf(t)).collect();
        for instr in program {
            let here = ids.len();
            debug_assert_eq!(here, g.len());
            let mut inputs = Vec::with_capacity(instr.inputs.len());
            for &i in &instr.inputs {
                if i >= total {
                    return Err(GraphError::UnknownNode(i));
                }
                if i >= here {
                    return Err(GraphError::Cycle { node: here, input: i });
                }
                inputs.push(ids[i]);
            }
            ids.push(g.apply_named(&instr.primitive, &inputs, instr.params.clone())?);
        }
        Ok((g, ids))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind<T> {
        &self.nodes[id.0].kind
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Number of operation nodes with the given primitive name.
    pub fn count_ops(&self, name: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(&n.kind, NodeKind::Op { op, .. } if op.name() == name))
            .count()
    }

    /// Primitive names in insertion order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Op { op, .. } => Some(op.name()),
                _ => None,
            })
            .collect()
    }

    /// Checks that every node consumes only earlier nodes.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if let NodeKind::Op { inputs, .. } = &n.kind {
                if let Some(bad) = inputs.iter().find(|x| x.0 >= i) {
                    return Err(GraphError::Cycle { node: i, input: bad.0 });
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep from `output`. Every leaf of the graph gets an entry;
    /// leaves that do not influence `output` get exact zeros.
    pub fn backward(&self, output: NodeId, seed: Option<&Tensor<T>>) -> Result<Gradients<T>, GraphError> {
        let out = self.node(output)?;
        self.validate()?;
        let seed = match seed {
            Some(s) if s.shape() != out.value.shape() => {
                return Err(GraphError::SeedShape {
                    expected: out.value.shape().to_vec(),
                    got: s.shape().to_vec(),
                })
            }
            Some(s) => s.clone(),
            None if out.value.len() == 1 => Tensor::full(out.value.shape(), T::one()),
            None => return Err(GraphError::NonScalar(out.value.shape().to_vec())),
        };

        let mut pending: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        pending[output.0] = Some(seed);
        let mut grads = BTreeMap::new();
        let mut visited = 0;
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(g) = pending[idx].take() else {
                continue;
            };
            match &node.kind {
                NodeKind::Leaf => {
                    grads.insert(NodeId(idx), g);
                }
                NodeKind::Constant => {}
                NodeKind::Op { op, inputs } => {
                    if !node.requires_grad {
                        continue;
                    }
                    visited += 1;
                    let values: Vec<&Tensor<T>> = inputs.iter().map(|i| &*self.nodes[i.0].value).collect();
                    let needs: Vec<bool> = inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
                    let contribs = op.vjp(&values, &node.value, &g, &needs);
                    for (input, contrib) in inputs.iter().zip(contribs) {
                        let Some(c) = contrib else { continue };
                        let slot = &mut pending[input.0];
                        match slot {
                            Some(acc) => {
                                for (a, &v) in acc.data_mut().iter_mut().zip(c.data()) {
                                    *a += v;
                                }
                            }
                            None => *slot = Some(c),
                        }
                    }
                }
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.kind, NodeKind::Leaf) {
                grads
                    .entry(NodeId(i))
                    .or_insert_with(|| Tensor::zeros(n.value.shape()));
            }
        }
        Ok(Gradients { grads, visited })
    }

    binary! {
        matmul => Op::MatMul,
        add => Op::Add,
        sub => Op::Sub,
        mul => Op::Mul,
        scale_by => Op::ScaleBy,
        concat_rows => Op::ConcatRows,
        squared_l2 => Op::SquaredL2,
    }

    unary! {
        recip => Op::Recip,
        sum => Op::Sum,
        transpose => Op::Transpose,
        relu => Op::Relu,
        softplus => Op::Softplus,
        softplus_prime => Op::SoftplusPrime,
        l2_normalize => Op::L2Normalize,
        softmax => Op::Softmax,
        mean_pool => Op::MeanPool,
        total_variation => Op::TotalVariation,
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId, GraphError> {
        self.apply(Op::Scale(factor), &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        self.apply(Op::Reshape(shape.to_vec()), &[x])
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        self.apply(Op::Conv2d, &[x, kernel, bias])
    }

    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId, GraphError> {
        self.apply(Op::CrossEntropy(target), &[logits])
    }

    /// `x [n] -> [1, n]`
    pub fn as_row(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let n = self.value(x).len();
        self.reshape(x, &[1, n])
    }

    /// `x [1, n] or [n] -> [n]`
    pub fn as_vector(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }
}
