use std::sync::Arc;

use crate::autodiff::{Activation, Graph, NodeId, Op};
use crate::model::{Adapter, AdapterNodes, MultimodalModel, PeftMode, PeftParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{AttackError, MatchingLoss};

fn eval<T: Scalar>(op: Op<T>, inputs: &[&Tensor<T>]) -> Tensor<T> {
    op.forward(inputs).expect("shapes checked by construction")
}

fn transposed<T: Scalar>(t: &Tensor<T>) -> Arc<Tensor<T>> {
    Arc::new(eval(Op::Transpose, &[t]))
}

/// Column `[C, 1]` of `softmax(y) - onehot(label)`. The label entry is
/// written as minus the other probabilities so it cannot round to zero.
pub fn label_coefficient<T: Scalar>(g: &mut Graph<T>, logits: NodeId, label: usize) -> Result<NodeId, AttackError> {
    let c = g.value(logits).len();
    if label >= c {
        return Err(AttackError::Shape(format!("label {label} out of range for {c} classes")));
    }
    let p = g.softmax(logits)?;
    let mask = g.constant(Tensor::from_fn(&[c], |i| if i == label { T::zero() } else { T::one() }));
    let others = g.mul(p, mask)?;
    let total = g.sum(others)?;
    let total = g.reshape(total, &[1, 1])?;
    let onehot = g.constant(Tensor::from_fn(&[c, 1], |i| if i == label { T::one() } else { T::zero() }));
    let at_label = g.matmul(onehot, total)?;
    let col = g.reshape(others, &[c, 1])?;
    Ok(g.sub(col, at_label)?)
}

/// Column `[C, 1]` of `softmax(y) - softmax(z)` for a jointly optimized
/// soft label `z`.
pub fn soft_label_coefficient<T: Scalar>(g: &mut Graph<T>, logits: NodeId, z: NodeId) -> Result<NodeId, AttackError> {
    let c = g.value(logits).len();
    if g.value(z).len() != c {
        return Err(AttackError::Shape(format!("soft label has {} entries, expected {c}", g.value(z).len())));
    }
    let p = g.softmax(logits)?;
    let z = g.as_vector(z)?;
    let q = g.softmax(z)?;
    let d = g.sub(p, q)?;
    Ok(g.reshape(d, &[c, 1])?)
}

/// `LS * coeff * IF`, the text-feature gradient of a cross-entropy loss
/// whose logit gradient is `coeff`. Every row is parallel to `IF`.
pub fn text_grad_from_coefficient<T: Scalar>(
    g: &mut Graph<T>,
    coeff: NodeId,
    image_feature: NodeId,
    logit_scale: T,
) -> Result<NodeId, AttackError> {
    let outer = g.matmul(coeff, image_feature)?;
    Ok(g.scale(outer, logit_scale)?)
}

/// Dummy text-feature gradient `(softmax(Y') - onehot(label)) * LS * IF(x)`
/// of the image node `x` under the model's current parameters. The text
/// features enter as a constant.
pub fn dummy_text_grad<T: Scalar>(
    g: &mut Graph<T>,
    model: &MultimodalModel<T>,
    x: NodeId,
    label: usize,
) -> Result<NodeId, AttackError> {
    model.check_label(label)?;
    let tf = g.constant(model.encode_text()?);
    let adapter = model.peft().image_adapter.as_ref().map(|a| a.nodes(g, false));
    let imf = model.image_feature_node(g, x, adapter.as_ref())?;
    let y = model.logits_node(g, imf, tf)?;
    let coeff = label_coefficient(g, y, label)?;
    text_grad_from_coefficient(g, coeff, imf, model.logit_scale())
}

/// Distance between matched tensor lists, per `kind`. Cosine treats each
/// list as one concatenated vector.
pub fn gradient_distance<T: Scalar>(
    g: &mut Graph<T>,
    dummy: &[NodeId],
    target: &[NodeId],
    kind: MatchingLoss,
) -> Result<NodeId, AttackError> {
    if dummy.len() != target.len() || dummy.is_empty() {
        return Err(AttackError::Shape("gradient lists differ in length".into()));
    }
    match kind {
        MatchingLoss::SquaredL2 => {
            let mut acc: Option<NodeId> = None;
            for (&a, &b) in dummy.iter().zip(target) {
                let d = g.squared_l2(a, b)?;
                acc = Some(match acc {
                    Some(s) => g.add(s, d)?,
                    None => d,
                });
            }
            Ok(acc.expect("nonempty"))
        }
        MatchingLoss::Cosine => {
            let a = concat_flat(g, dummy)?;
            let b = concat_flat(g, target)?;
            let a = g.l2_normalize(a)?;
            let b = g.l2_normalize(b)?;
            let ab = g.mul(a, b)?;
            let cos = g.sum(ab)?;
            let one = g.scalar_constant(T::one());
            Ok(g.sub(one, cos)?)
        }
    }
}

/// All entries of `parts` as one `[1, n]` row.
fn concat_flat<T: Scalar>(g: &mut Graph<T>, parts: &[NodeId]) -> Result<NodeId, AttackError> {
    let mut acc: Option<NodeId> = None;
    for &p in parts {
        let n = g.value(p).len();
        let col = g.reshape(p, &[n, 1])?;
        acc = Some(match acc {
            Some(s) => g.concat_rows(s, col)?,
            None => col,
        });
    }
    let acc = acc.expect("nonempty");
    let n = g.value(acc).len();
    Ok(g.reshape(acc, &[1, n])?)
}

/// `data + alpha * TV(x)`
pub fn add_tv<T: Scalar>(g: &mut Graph<T>, data: NodeId, x: NodeId, alpha: T) -> Result<NodeId, AttackError> {
    if !(alpha >= T::zero()) {
        return Err(AttackError::Config("TV weight must be non-negative".into()));
    }
    let tv = g.total_variation(x)?;
    let tv = g.scale(tv, alpha)?;
    Ok(g.add(data, tv)?)
}

/// Gradient-matching loss between a target and a dummy text-feature
/// gradient, plus `alpha * TV(x)`.
pub fn matching_loss<T: Scalar>(
    g: &mut Graph<T>,
    target: NodeId,
    dummy: NodeId,
    x: NodeId,
    alpha: T,
    kind: MatchingLoss,
) -> Result<NodeId, AttackError> {
    let data = gradient_distance(g, &[dummy], &[target], kind)?;
    add_tv(g, data, x, alpha)
}

/// Forward pass of a softplus image adapter with its intermediates kept
/// for [`AdapterExpr::param_grads`].
#[derive(Debug, Clone, Copy)]
pub struct AdapterExpr {
    pub raw: NodeId,
    pub a1: NodeId,
    pub h1: NodeId,
    pub a2: NodeId,
    pub u: NodeId,
    /// Adapter output, normalized when the model normalizes features.
    pub feature: NodeId,
    pub normalized: bool,
}

impl AdapterExpr {
    pub fn forward<T: Scalar>(
        g: &mut Graph<T>,
        nodes: &AdapterNodes,
        raw: NodeId,
        normalize: bool,
    ) -> Result<Self, AttackError> {
        if nodes.activation != Activation::Softplus {
            return Err(AttackError::NotTwiceDifferentiable(nodes.activation.name()));
        }
        let a1 = nodes.fc1.forward(g, raw)?;
        let h1 = g.softplus(a1)?;
        let a2 = nodes.fc2.forward(g, h1)?;
        let u = g.softplus(a2)?;
        let feature = if normalize { g.l2_normalize(u)? } else { u };
        Ok(Self {
            raw,
            a1,
            h1,
            a2,
            u,
            feature,
            normalized: normalize,
        })
    }

    /// Closed-form adapter gradients `[gW1, gb1, gW2, gb2]` of a
    /// cross-entropy loss with logit gradient `coeff` `[C, 1]`, written
    /// with `softplus'` nodes so the result stays differentiable in the
    /// image with first-order reverse mode.
    pub fn param_grads<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        nodes: &AdapterNodes,
        coeff: NodeId,
        text_features: NodeId,
        logit_scale: T,
    ) -> Result<[NodeId; 4], AttackError> {
        let ct = g.transpose(coeff)?;
        let q = g.matmul(ct, text_features)?;
        let q = g.scale(q, logit_scale)?;
        let du = if self.normalized {
            let fu = g.mul(self.feature, self.u)?;
            let norm = g.sum(fu)?;
            let inv = g.recip(norm)?;
            let fq = g.mul(self.feature, q)?;
            let along = g.sum(fq)?;
            let radial = g.scale_by(self.feature, along)?;
            let tangent = g.sub(q, radial)?;
            g.scale_by(tangent, inv)?
        } else {
            q
        };
        let s2 = g.softplus_prime(self.a2)?;
        let d2 = g.mul(du, s2)?;
        let h1t = g.transpose(self.h1)?;
        let gw2 = g.matmul(h1t, d2)?;
        let gb2 = g.as_vector(d2)?;
        let w2t = g.transpose(nodes.fc2.w)?;
        let back = g.matmul(d2, w2t)?;
        let s1 = g.softplus_prime(self.a1)?;
        let d1 = g.mul(back, s1)?;
        let rt = g.transpose(self.raw)?;
        let gw1 = g.matmul(rt, d1)?;
        let gb1 = g.as_vector(d1)?;
        Ok([gw1, gb1, gw2, gb2])
    }
}

/// Adapter-gradient expression of the image node's raw feature `raw`
/// `[1, fd]`: forward intermediates plus `[gW1, gb1, gW2, gb2]`.
pub fn adapter_grad_expression<T: Scalar>(
    g: &mut Graph<T>,
    adapter: &AdapterNodes,
    raw: NodeId,
    downstream: NodeId,
    text_features: NodeId,
    logit_scale: T,
    normalize: bool,
) -> Result<(AdapterExpr, [NodeId; 4]), AttackError> {
    let expr = AdapterExpr::forward(g, adapter, raw, normalize)?;
    let c = g.value(downstream).len();
    let coeff = g.reshape(downstream, &[c, 1])?;
    let grads = expr.param_grads(g, adapter, coeff, text_features, logit_scale)?;
    Ok((expr, grads))
}

#[derive(Debug, Clone)]
enum VjpBody<T> {
    /// Shared soft prompt through mean pooling and the text MLP.
    Prompt {
        /// Per layer, last first: `W^T` and the relu mask of the layer's
        /// input (absent for the first layer).
        layers: Vec<(Arc<Tensor<T>>, Option<Arc<Tensor<T>>>)>,
        /// `[1, C]`, entry `i` is `1 / (prompt_len + tokens_i)`.
        pool: Arc<Tensor<T>>,
        prompt_len: usize,
    },
    Adapter {
        raw_t: Arc<Tensor<T>>,
        h1_t: Arc<Tensor<T>>,
        s1: Arc<Tensor<T>>,
        s2: Arc<Tensor<T>>,
        w2_t: Arc<Tensor<T>>,
    },
}

/// Vector-Jacobian product of the text features w.r.t. the hot text
/// parameters, linearized at the current parameters. Because the text
/// features do not depend on the image, this is exact for any upstream
/// gradient, and it is linear in that gradient.
#[derive(Debug, Clone)]
pub struct TextVjp<T> {
    /// Normalized features and `1 / ||u||` broadcast to `[C, fd]`.
    normalize: Option<(Arc<Tensor<T>>, Arc<Tensor<T>>)>,
    body: VjpBody<T>,
}

fn derivative<T: Scalar>(act: Activation, a: &Tensor<T>) -> Tensor<T> {
    match act {
        Activation::Relu => a.map(|v| if v > T::zero() { T::one() } else { T::zero() }),
        Activation::Softplus => a.map(|v| T::one() / (T::one() + (-v).exp())),
    }
}

impl<T: Scalar> TextVjp<T> {
    pub fn new(model: &MultimodalModel<T>, params: &PeftParams<T>) -> Result<Self, AttackError> {
        let mode = model.mode();
        let mut g = Graph::new();
        let prompt = params.prompt.as_ref().map(|p| g.constant_shared(p));
        let pooled = model.pooled_text_node(&mut g, prompt)?;
        let text = &model.frozen().text;
        let mut h = pooled;
        let mut pre = Vec::with_capacity(text.layers.len());
        for (i, layer) in text.layers.iter().enumerate() {
            let nodes = layer.nodes(&mut g, false);
            let z = nodes.forward(&mut g, h)?;
            pre.push(z);
            h = if i + 1 < text.layers.len() { g.relu(z)? } else { z };
        }
        let raw = h;
        let (out, body) = match mode {
            PeftMode::SoftPrompt => {
                let prompt_len = params.prompt.as_ref().map_or(0, |p| p.shape()[0]);
                let c = model.num_classes();
                let pool = Tensor::from_fn(&[1, c], |i| {
                    let n = model.tokenizer().encode(&model.class_names()[i]).len();
                    T::one() / T::of((prompt_len + n) as f64)
                });
                let layers = text
                    .layers
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(l, layer)| {
                        let mask = (l > 0).then(|| Arc::new(derivative(Activation::Relu, g.value(pre[l - 1]))));
                        (transposed(&layer.w), mask)
                    })
                    .collect();
                (
                    raw,
                    VjpBody::Prompt {
                        layers,
                        pool: Arc::new(pool),
                        prompt_len,
                    },
                )
            }
            PeftMode::TextAdapter | PeftMode::DoubleAdapter => {
                let adapter: &Adapter<T> = params
                    .text_adapter
                    .as_ref()
                    .ok_or_else(|| AttackError::Incompatible("no text adapter parameters".into()))?;
                let nodes = adapter.nodes(&mut g, false);
                let a1 = nodes.fc1.forward(&mut g, raw)?;
                let h1 = g.apply(adapter.activation.op(), &[a1])?;
                let a2 = nodes.fc2.forward(&mut g, h1)?;
                let u = g.apply(adapter.activation.op(), &[a2])?;
                let body = VjpBody::Adapter {
                    raw_t: transposed(g.value(raw)),
                    h1_t: transposed(g.value(h1)),
                    s1: Arc::new(derivative(adapter.activation, g.value(a1))),
                    s2: Arc::new(derivative(adapter.activation, g.value(a2))),
                    w2_t: transposed(&adapter.fc2.w),
                };
                (u, body)
            }
        };
        let normalize = if model.config().normalize_features {
            let u = g.value(out);
            let fd = u.shape()[1];
            let mut y = u.clone();
            let mut inv = u.clone();
            for (yr, ir) in y.data_mut().chunks_mut(fd).zip(inv.data_mut().chunks_mut(fd)) {
                let n = yr.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b).sqrt();
                for (yv, iv) in yr.iter_mut().zip(ir.iter_mut()) {
                    *yv /= n;
                    *iv = n.recip();
                }
            }
            Some((Arc::new(y), Arc::new(inv)))
        } else {
            None
        };
        Ok(Self { normalize, body })
    }

    /// Hot-parameter gradients for upstream text-feature gradient `gtf`
    /// `[C, fd]`, in `PeftParams::tensors` order for the text side.
    pub fn apply(&self, g: &mut Graph<T>, gtf: NodeId) -> Result<Vec<NodeId>, AttackError> {
        let (c, fd) = match *g.value(gtf).shape() {
            [c, fd] => (c, fd),
            ref s => return Err(AttackError::Shape(format!("expected [classes, dim], got {s:?}"))),
        };
        let gu = match &self.normalize {
            Some((y, inv)) => {
                let y = g.constant_shared(y);
                let inv = g.constant_shared(inv);
                let ones_col = g.constant(Tensor::full(&[fd, 1], T::one()));
                let ones_row = g.constant(Tensor::full(&[1, fd], T::one()));
                let yg = g.mul(y, gtf)?;
                let along = g.matmul(yg, ones_col)?;
                let along = g.matmul(along, ones_row)?;
                let radial = g.mul(y, along)?;
                let tangent = g.sub(gtf, radial)?;
                g.mul(tangent, inv)?
            }
            None => gtf,
        };
        match &self.body {
            VjpBody::Prompt {
                layers,
                pool,
                prompt_len,
            } => {
                let mut grad = gu;
                for (wt, mask) in layers {
                    let wt = g.constant_shared(wt);
                    grad = g.matmul(grad, wt)?;
                    if let Some(m) = mask {
                        let m = g.constant_shared(m);
                        grad = g.mul(grad, m)?;
                    }
                }
                let pool = g.constant_shared(pool);
                let row = g.matmul(pool, grad)?;
                let ones = g.constant(Tensor::full(&[*prompt_len, 1], T::one()));
                Ok(vec![g.matmul(ones, row)?])
            }
            VjpBody::Adapter {
                raw_t,
                h1_t,
                s1,
                s2,
                w2_t,
            } => {
                let ones = g.constant(Tensor::full(&[1, c], T::one()));
                let s2 = g.constant_shared(s2);
                let d2 = g.mul(gu, s2)?;
                let h1_t = g.constant_shared(h1_t);
                let gw2 = g.matmul(h1_t, d2)?;
                let gb2 = g.matmul(ones, d2)?;
                let gb2 = g.as_vector(gb2)?;
                let w2_t = g.constant_shared(w2_t);
                let back = g.matmul(d2, w2_t)?;
                let s1 = g.constant_shared(s1);
                let d1 = g.mul(back, s1)?;
                let raw_t = g.constant_shared(raw_t);
                let gw1 = g.matmul(raw_t, d1)?;
                let gb1 = g.matmul(ones, d1)?;
                let gb1 = g.as_vector(gb1)?;
                Ok(vec![gw1, gb1, gw2, gb2])
            }
        }
    }
}

/// Which logit gradient drives the dummy gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Fixed(usize),
    /// Soft label `softmax(z)` optimized jointly with the image.
    Joint,
}

#[derive(Debug, Clone)]
enum TextTerm<T> {
    /// Match dummy against target text-feature gradients.
    Features(Arc<Tensor<T>>),
    /// Match hot text-parameter gradients through a [`TextVjp`].
    Params { vjp: TextVjp<T>, target: Vec<Arc<Tensor<T>>> },
}

/// Handles into one evaluation of a [`MatchingObjective`].
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub loss: NodeId,
    pub data: NodeId,
    pub image_feature: NodeId,
    pub coefficient: NodeId,
    pub dummy_text_grad: NodeId,
}

/// Reconstruction objective of the image (and soft label). The text
/// features are a constant: nothing here reads the text encoder.
#[derive(Debug, Clone)]
pub struct MatchingObjective<'m, T> {
    model: &'m MultimodalModel<T>,
    text_features: Arc<Tensor<T>>,
    text: TextTerm<T>,
    image_target: Option<Vec<Arc<Tensor<T>>>>,
    label: LabelSource,
    kind: MatchingLoss,
}

impl<'m, T: Scalar> MatchingObjective<'m, T> {
    /// Matches the dummy text-feature gradient against `target` `[C, fd]`.
    pub fn features(
        model: &'m MultimodalModel<T>,
        text_features: Tensor<T>,
        target: Tensor<T>,
        label: LabelSource,
        kind: MatchingLoss,
    ) -> Result<Self, AttackError> {
        let want = [model.num_classes(), model.config().feature_dim()];
        if text_features.shape() != want || target.shape() != want {
            return Err(AttackError::Shape(format!(
                "text features {:?} and target {:?} must both be {want:?}",
                text_features.shape(),
                target.shape()
            )));
        }
        if let LabelSource::Fixed(l) = label {
            model.check_label(l)?;
        }
        Ok(Self {
            model,
            text_features: Arc::new(text_features),
            text: TextTerm::Features(Arc::new(target)),
            image_target: None,
            label,
            kind,
        })
    }

    /// Matches hot text-parameter gradients (prompt or text adapter)
    /// against `target`, the leaked ones.
    pub fn params(
        model: &'m MultimodalModel<T>,
        target: &PeftParams<T>,
        label: LabelSource,
        kind: MatchingLoss,
    ) -> Result<Self, AttackError> {
        if !target.same_structure(model.peft()) {
            return Err(AttackError::Incompatible("target gradients do not match the PEFT mode".into()));
        }
        let vjp = TextVjp::new(model, model.peft())?;
        let target: Vec<Arc<Tensor<T>>> = match model.mode() {
            PeftMode::SoftPrompt => vec![target.prompt.clone().expect("same structure")],
            _ => {
                let a = target.text_adapter.as_ref().expect("same structure");
                vec![a.fc1.w.clone(), a.fc1.b.clone(), a.fc2.w.clone(), a.fc2.b.clone()]
            }
        };
        Ok(Self {
            model,
            text_features: Arc::new(model.encode_text()?),
            text: TextTerm::Params { vjp, target },
            image_target: None,
            label,
            kind,
        })
    }

    /// Adds the image-adapter term, weighted 1:1 with the text term.
    pub fn with_image_target(mut self, target: &Adapter<T>) -> Result<Self, AttackError> {
        let current = self
            .model
            .peft()
            .image_adapter
            .as_ref()
            .ok_or_else(|| AttackError::Incompatible("model has no image adapter".into()))?;
        if current.activation != Activation::Softplus {
            return Err(AttackError::NotTwiceDifferentiable(current.activation.name()));
        }
        let shapes_match = current.tensors().iter().zip(target.tensors()).all(|(a, b)| a.shape() == b.shape());
        if !shapes_match {
            return Err(AttackError::Incompatible("image-adapter target has the wrong shape".into()));
        }
        self.image_target = Some(vec![
            target.fc1.w.clone(),
            target.fc1.b.clone(),
            target.fc2.w.clone(),
            target.fc2.b.clone(),
        ]);
        Ok(self)
    }

    pub fn label(&self) -> LabelSource {
        self.label
    }

    pub fn text_features(&self) -> &Tensor<T> {
        &self.text_features
    }

    /// Builds the objective at image node `x` (and soft label `z` for
    /// [`LabelSource::Joint`]).
    pub fn build(&self, g: &mut Graph<T>, x: NodeId, z: Option<NodeId>, alpha: T) -> Result<ObjectiveNodes, AttackError> {
        let model = self.model;
        let ls = model.logit_scale();
        let normalize = model.config().normalize_features;
        let raw = model.image_raw_node(g, x)?;
        let tf = g.constant_shared(&self.text_features);
        let adapter = model.peft().image_adapter.as_ref().map(|a| a.nodes(g, false));
        let (feature, expr) = match &adapter {
            Some(nodes) => {
                let e = AdapterExpr::forward(g, nodes, raw, normalize)?;
                (e.feature, Some(e))
            }
            None => (if normalize { g.l2_normalize(raw)? } else { raw }, None),
        };
        let y = model.logits_node(g, feature, tf)?;
        let coeff = match (self.label, z) {
            (LabelSource::Fixed(l), _) => label_coefficient(g, y, l)?,
            (LabelSource::Joint, Some(z)) => soft_label_coefficient(g, y, z)?,
            (LabelSource::Joint, None) => return Err(AttackError::Config("joint label needs a soft-label node".into())),
        };
        let dummy = text_grad_from_coefficient(g, coeff, feature, ls)?;
        let mut data = match &self.text {
            TextTerm::Features(t) => {
                let t = g.constant_shared(t);
                gradient_distance(g, &[dummy], &[t], self.kind)?
            }
            TextTerm::Params { vjp, target } => {
                let pieces = vjp.apply(g, dummy)?;
                let targets: Vec<NodeId> = target.iter().map(|t| g.constant_shared(t)).collect();
                gradient_distance(g, &pieces, &targets, self.kind)?
            }
        };
        if let (Some(target), Some(expr), Some(nodes)) = (&self.image_target, &expr, &adapter) {
            let grads = expr.param_grads(g, nodes, coeff, tf, ls)?;
            let targets: Vec<NodeId> = target.iter().map(|t| g.constant_shared(t)).collect();
            let term = gradient_distance(g, &grads, &targets, self.kind)?;
            data = g.add(data, term)?;
        }
        let loss = add_tv(g, data, x, alpha)?;
        Ok(ObjectiveNodes {
            loss,
            data,
            image_feature: feature,
            coefficient: coeff,
            dummy_text_grad: dummy,
        })
    }

    /// Loss and its gradients w.r.t. `x` and, for a joint label, `z`.
    pub fn loss_and_grad(
        &self,
        x: &Tensor<T>,
        z: Option<&Tensor<T>>,
        alpha: T,
    ) -> Result<(T, Tensor<T>, Option<Tensor<T>>), AttackError> {
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let zn = z.map(|z| g.leaf(z.clone()));
        let nodes = self.build(&mut g, xn, zn, alpha)?;
        let mut grads = g.backward(nodes.loss, None)?;
        let gx = grads.take(xn).expect("leaf gradient");
        let gz = zn.map(|n| grads.take(n).expect("leaf gradient"));
        Ok((g.value(nodes.loss).item(), gx, gz))
    }

    pub fn loss(&self, x: &Tensor<T>, z: Option<&Tensor<T>>, alpha: T) -> Result<T, AttackError> {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let zn = z.map(|z| g.constant(z.clone()));
        let nodes = self.build(&mut g, xn, zn, alpha)?;
        Ok(g.value(nodes.loss).item())
    }
}
