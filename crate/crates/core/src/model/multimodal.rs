use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{softmax_minus_onehot, Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{ModelConfig, PeftMode};
use super::layers::{init_uniform, Adapter, AdapterNodes, ImageEncoder, TextEncoder};
use super::tokenizer::Tokenizer;
use super::ModelError;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Parameters that never change during fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct FrozenWeights<T> {
    pub text: TextEncoder<T>,
    pub image: ImageEncoder<T>,
    /// Fixed context tokens prepended to class names when the prompt is
    /// not the tuned parameter.
    pub context: Option<Arc<Tensor<T>>>,
}

/// Hot parameters, or a gradient with the same structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct PeftParams<T> {
    pub prompt: Option<Arc<Tensor<T>>>,
    pub text_adapter: Option<Adapter<T>>,
    pub image_adapter: Option<Adapter<T>>,
}

impl<T: Scalar> PeftParams<T> {
    /// Present tensors in a fixed order: prompt, text adapter, image adapter.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = Vec::new();
        if let Some(p) = &self.prompt {
            out.push(p);
        }
        for a in [&self.text_adapter, &self.image_adapter].into_iter().flatten() {
            out.extend(a.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        if let Some(p) = &mut self.prompt {
            out.push(Arc::make_mut(p));
        }
        for a in [&mut self.text_adapter, &mut self.image_adapter].into_iter().flatten() {
            out.extend(a.tensors_mut());
        }
        out
    }

    /// Field names of the present tensors, aligned with [`Self::tensors`].
    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.prompt.is_some() {
            out.push("prompt");
        }
        if self.text_adapter.is_some() {
            out.extend(["text_adapter.w1", "text_adapter.b1", "text_adapter.w2", "text_adapter.b2"]);
        }
        if self.image_adapter.is_some() {
            out.extend(["image_adapter.w1", "image_adapter.b1", "image_adapter.w2", "image_adapter.b2"]);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        self.names() == other.names() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }

    /// Elementwise combination of two structurally identical parameter sets.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, ModelError> {
        if !self.same_structure(other) {
            return Err(ModelError::Structure(format!(
                "parameter sets differ: {:?} vs {:?}",
                self.names(),
                other.names()
            )));
        }
        let mut out = self.clone();
        for (o, t) in out.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in o.data_mut().iter_mut().zip(t.data()) {
                *a = f(*a, b);
            }
        }
        Ok(out)
    }

    /// `self - eta * grad`
    pub fn sgd_step(&self, grad: &Self, eta: T) -> Result<Self, ModelError> {
        self.zip_map(grad, |p, g| p - eta * g)
    }

    pub fn scale(&self, factor: T) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        self.scale(T::zero())
    }

    pub fn norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T, ModelError> {
        let d = self.zip_map(other, |a, b| a - b)?;
        Ok(d.tensors().iter().map(|t| t.max_abs()).fold(T::zero(), T::max))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> PeftParams<U> {
        let cast_adapter = |a: &Adapter<T>| Adapter {
            fc1: super::layers::Linear::new(a.fc1.w.cast(), a.fc1.b.cast()),
            fc2: super::layers::Linear::new(a.fc2.w.cast(), a.fc2.b.cast()),
            activation: a.activation,
        };
        PeftParams {
            prompt: self.prompt.as_ref().map(|p| Arc::new(p.cast())),
            text_adapter: self.text_adapter.as_ref().map(cast_adapter),
            image_adapter: self.image_adapter.as_ref().map(cast_adapter),
        }
    }
}

/// Graph handles for the hot parameters of one forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeftNodes {
    pub prompt: Option<NodeId>,
    pub text_adapter: Option<AdapterNodes>,
    pub image_adapter: Option<AdapterNodes>,
}

/// CLIP-like classifier with frozen encoders and PEFT parameters.
#[derive(Debug, Clone)]
pub struct MultimodalModel<T> {
    config: ModelConfig,
    tokenizer: Tokenizer,
    class_tokens: Vec<Vec<usize>>,
    frozen: FrozenWeights<T>,
    peft: PeftParams<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelDocument<T> {
    version: u32,
    config: ModelConfig,
    tokenizer: Tokenizer,
    frozen: FrozenWeights<T>,
    peft: PeftParams<T>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

fn tokenize_classes(tok: &Tokenizer, names: &[String]) -> Result<Vec<Vec<usize>>, ModelError> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let ids = tok.encode(n);
            if ids.is_empty() {
                Err(ModelError::EmptyClassName(i))
            } else {
                Ok(ids)
            }
        })
        .collect()
}

impl<T: Scalar> MultimodalModel<T> {
    /// Random initialization from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let tokenizer = Tokenizer::from_class_names(&config.class_names);
        let class_tokens = tokenize_classes(&tokenizer, &config.class_names)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let text = TextEncoder::init(&config, tokenizer.table_size(), &mut rng);
        let e = config.embed_dim;
        let prompt = (config.prompt_len > 0).then(|| Arc::new(init_uniform(&[config.prompt_len, e], 1, &mut rng)));
        let image = ImageEncoder::init(&config, &mut rng);
        let (fd, hidden, act) = (config.feature_dim(), config.adapter_hidden(), config.adapter_activation);
        let mode = config.peft_mode;
        let text_adapter = mode.has_text_adapter().then(|| Adapter::init(fd, hidden, act, &mut rng));
        let image_adapter = mode.has_image_adapter().then(|| Adapter::init(fd, hidden, act, &mut rng));
        let (context, prompt) = if mode.has_hot_prompt() { (None, prompt) } else { (prompt, None) };
        Ok(Self {
            config,
            tokenizer,
            class_tokens,
            frozen: FrozenWeights { text, image, context },
            peft: PeftParams {
                prompt,
                text_adapter,
                image_adapter,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> PeftMode {
        self.config.peft_mode
    }

    pub fn num_classes(&self) -> usize {
        self.class_tokens.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.config.class_names
    }

    pub fn logit_scale(&self) -> T {
        T::of(self.config.logit_scale)
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn frozen(&self) -> &FrozenWeights<T> {
        &self.frozen
    }

    /// Direct access for building hand-crafted instances.
    pub fn frozen_mut(&mut self) -> &mut FrozenWeights<T> {
        &mut self.frozen
    }

    pub fn peft(&self) -> &PeftParams<T> {
        &self.peft
    }

    pub fn set_peft(&mut self, params: PeftParams<T>) -> Result<(), ModelError> {
        if !self.peft.same_structure(&params) {
            return Err(ModelError::Structure("replacement parameters do not match the PEFT mode".into()));
        }
        self.peft = params;
        Ok(())
    }

    /// Same weights with a different class list; the vocabulary is kept,
    /// so unseen words fall into hash buckets.
    pub fn with_class_names(&self, names: Vec<String>) -> Result<Self, ModelError> {
        let mut config = self.config.clone();
        config.class_names = names;
        config.validate()?;
        let class_tokens = tokenize_classes(&self.tokenizer, &config.class_names)?;
        Ok(Self {
            config,
            class_tokens,
            ..self.clone()
        })
    }

    /// Same weights with a different text MLP; used to check that
    /// reconstruction never touches the text tower.
    pub fn with_text_encoder(&self, text: TextEncoder<T>) -> Result<Self, ModelError> {
        let out = text.layers.last().map(|l| l.out_dim());
        if out != Some(self.config.feature_dim()) || text.embedding.shape() != self.frozen.text.embedding.shape() {
            return Err(ModelError::Structure("text encoder shapes do not match".into()));
        }
        let mut m = self.clone();
        m.config.text_layers = text.layers.len();
        m.frozen.text = text;
        Ok(m)
    }

    /// Accepts `[c, h, w]`, or `[h, w]` for single-channel models.
    pub fn check_image(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let want = self.config.image_shape();
        match *x.shape() {
            [c, h, w] if [c, h, w] == want => Ok(x.clone()),
            [h, w] if [1, h, w] == want => Ok(x.reshape(&want).expect("same size")),
            _ => Err(ModelError::ImageShape {
                expected: want.to_vec(),
                got: x.shape().to_vec(),
            }),
        }
    }

    pub fn check_label(&self, label: usize) -> Result<(), ModelError> {
        if label >= self.num_classes() {
            return Err(ModelError::Label {
                label,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Puts the hot parameters into `g` as leaves (`hot`) or constants.
    pub fn peft_nodes(&self, g: &mut Graph<T>, params: &PeftParams<T>, hot: bool) -> PeftNodes {
        PeftNodes {
            prompt: params.prompt.as_ref().map(|p| if hot { g.leaf_shared(p) } else { g.constant_shared(p) }),
            text_adapter: params.text_adapter.as_ref().map(|a| a.nodes(g, hot)),
            image_adapter: params.image_adapter.as_ref().map(|a| a.nodes(g, hot)),
        }
    }

    /// Raw image feature `[1, feature_dim]` before adapter and normalization.
    pub fn image_raw_node(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId, ModelError> {
        let want = self.config.image_shape();
        let shape = g.value(x).shape().to_vec();
        let x = if shape == want {
            x
        } else if shape == want[1..] && want[0] == 1 {
            g.reshape(x, &want)?
        } else {
            return Err(ModelError::ImageShape {
                expected: want.to_vec(),
                got: shape,
            });
        };
        Ok(self.frozen.image.forward(g, x)?)
    }

    /// Image feature `[1, feature_dim]`: raw feature, optional adapter,
    /// optional normalization.
    pub fn image_feature_node(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        adapter: Option<&AdapterNodes>,
    ) -> Result<NodeId, ModelError> {
        let raw = self.image_raw_node(g, x)?;
        let h = match adapter {
            Some(a) => a.forward(g, raw)?,
            None => raw,
        };
        Ok(if self.config.normalize_features { g.l2_normalize(h)? } else { h })
    }

    /// Mean-pooled token rows `[C, embed_dim]` for the given prompt tokens.
    pub fn pooled_text_node(&self, g: &mut Graph<T>, prompt: Option<NodeId>) -> Result<NodeId, ModelError> {
        let prefix = match prompt {
            Some(p) => Some(p),
            None => self.frozen.context.as_ref().map(|c| g.constant_shared(c)),
        };
        let mut rows: Option<NodeId> = None;
        for tokens in &self.class_tokens {
            let names = g.constant(self.frozen.text.embed(tokens));
            let seq = match prefix {
                Some(p) => g.concat_rows(p, names)?,
                None => names,
            };
            let pooled = g.mean_pool(seq)?;
            let row = g.as_row(pooled)?;
            rows = Some(match rows {
                Some(acc) => g.concat_rows(acc, row)?,
                None => row,
            });
        }
        Ok(rows.expect("at least one class"))
    }

    /// Text features before the adapter, `[C, feature_dim]`.
    pub fn text_raw_node(&self, g: &mut Graph<T>, prompt: Option<NodeId>) -> Result<NodeId, ModelError> {
        let pooled = self.pooled_text_node(g, prompt)?;
        Ok(self.frozen.text.mlp(g, pooled)?)
    }

    /// Text features `[C, feature_dim]`.
    pub fn text_feature_node(
        &self,
        g: &mut Graph<T>,
        prompt: Option<NodeId>,
        adapter: Option<&AdapterNodes>,
    ) -> Result<NodeId, ModelError> {
        let raw = self.text_raw_node(g, prompt)?;
        let h = match adapter {
            Some(a) => a.forward(g, raw)?,
            None => raw,
        };
        Ok(if self.config.normalize_features { g.l2_normalize(h)? } else { h })
    }

    /// `Y = LS * TF * IF`, shape `[C]`.
    pub fn logits_node(&self, g: &mut Graph<T>, image_feature: NodeId, text_features: NodeId) -> Result<NodeId, ModelError> {
        let tft = g.transpose(text_features)?;
        let y = g.matmul(image_feature, tft)?;
        let y = g.as_vector(y)?;
        Ok(g.scale(y, self.logit_scale())?)
    }

    /// Full forward pass; returns `(logits, image feature, text features)`.
    pub fn forward_nodes(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        nodes: &PeftNodes,
    ) -> Result<(NodeId, NodeId, NodeId), ModelError> {
        let imf = self.image_feature_node(g, x, nodes.image_adapter.as_ref())?;
        let tf = self.text_feature_node(g, nodes.prompt, nodes.text_adapter.as_ref())?;
        let y = self.logits_node(g, imf, tf)?;
        Ok((y, imf, tf))
    }

    pub fn encode_image(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.encode_image_with(x, &self.peft)
    }

    pub fn encode_image_with(&self, x: &Tensor<T>, params: &PeftParams<T>) -> Result<Tensor<T>, ModelError> {
        let x = self.check_image(x)?;
        let mut g = Graph::new();
        let xn = g.constant(x);
        let adapter = params.image_adapter.as_ref().map(|a| a.nodes(&mut g, false));
        let f = self.image_feature_node(&mut g, xn, adapter.as_ref())?;
        Ok(g.value(f).flatten())
    }

    pub fn encode_text(&self) -> Result<Tensor<T>, ModelError> {
        self.encode_text_with(&self.peft)
    }

    /// Text features under substitute hot parameters (forward only).
    pub fn encode_text_with(&self, params: &PeftParams<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let nodes = self.peft_nodes(&mut g, params, false);
        let tf = self.text_feature_node(&mut g, nodes.prompt, nodes.text_adapter.as_ref())?;
        Ok(g.value(tf).clone())
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let imf = self.encode_image(x)?;
        let tf = self.encode_text()?;
        logits(&imf, &tf, self.logit_scale())
    }

    /// Exact gradients of the cross-entropy loss w.r.t. the hot
    /// parameters, plus the loss value.
    pub fn peft_grads(&self, x: &Tensor<T>, label: usize) -> Result<(PeftParams<T>, T), ModelError> {
        self.peft_grads_with(x, label, &self.peft)
    }

    pub fn peft_grads_with(
        &self,
        x: &Tensor<T>,
        label: usize,
        params: &PeftParams<T>,
    ) -> Result<(PeftParams<T>, T), ModelError> {
        if self.mode() == PeftMode::DoubleAdapter && !self.config.adapter_activation.is_twice_differentiable() {
            return Err(ModelError::NotTwiceDifferentiable(self.config.adapter_activation.name()));
        }
        let x = self.check_image(x)?;
        self.check_label(label)?;
        let mut g = Graph::new();
        let xn = g.constant(x);
        let nodes = self.peft_nodes(&mut g, params, true);
        let (y, _, _) = self.forward_nodes(&mut g, xn, &nodes)?;
        let loss = g.cross_entropy(y, label)?;
        let grads = g.backward(loss, None)?;
        let out = PeftParams {
            prompt: nodes.prompt.map(|p| Arc::new(grads.wrt(p).clone())),
            text_adapter: params
                .text_adapter
                .as_ref()
                .zip(nodes.text_adapter.as_ref())
                .map(|(a, n)| a.from_nodes_grads(n, &grads)),
            image_adapter: params
                .image_adapter
                .as_ref()
                .zip(nodes.image_adapter.as_ref())
                .map(|(a, n)| a.from_nodes_grads(n, &grads)),
        };
        Ok((out, g.value(loss).item()))
    }

    /// Cross-entropy of the model on `(x, label)` under `params`.
    pub fn loss_with(&self, x: &Tensor<T>, label: usize, params: &PeftParams<T>) -> Result<T, ModelError> {
        let imf = self.encode_image_with(x, params)?;
        let tf = self.encode_text_with(params)?;
        loss(&logits(&imf, &tf, self.logit_scale())?, label)
    }

    /// Names of hot and frozen parameter groups; disjoint by construction.
    pub fn parameter_partition(&self) -> (Vec<String>, Vec<String>) {
        let hot: Vec<String> = self.peft.names().into_iter().map(String::from).collect();
        let mut frozen = vec!["text.embedding".to_string()];
        frozen.extend((0..self.frozen.text.layers.len()).flat_map(|i| [format!("text.mlp{i}.w"), format!("text.mlp{i}.b")]));
        if self.frozen.context.is_some() {
            frozen.push("context".into());
        }
        frozen.extend((0..self.frozen.image.tensors().len()).map(|i| format!("image.{i}")));
        (hot, frozen)
    }

    /// Hex SHA-256 over the frozen tensors (shapes and bit patterns) and
    /// the logit scale.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |t: &Tensor<T>| {
            h.update((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        };
        for t in self.frozen.text.tensors() {
            feed(t);
        }
        if let Some(c) = &self.frozen.context {
            feed(c);
        }
        for t in self.frozen.image.tensors() {
            feed(t);
        }
        h.update(self.config.logit_scale.to_bits().to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            frozen: self.frozen.clone(),
            peft: self.peft.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version {
                found: probe.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let doc: ModelDocument<T> = serde_json::from_str(text)?;
        doc.config.validate()?;
        let class_tokens = tokenize_classes(&doc.tokenizer, &doc.config.class_names)?;
        let model = Self {
            config: doc.config,
            tokenizer: doc.tokenizer,
            class_tokens,
            frozen: doc.frozen,
            peft: doc.peft,
        };
        let reference = Self::new(model.config.clone())?;
        if !reference.peft.same_structure(&model.peft) {
            return Err(ModelError::Structure("stored PEFT parameters do not match the configuration".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `Y[i] = LS * <IF, TF[i]>`.
pub fn logits<T: Scalar>(image_feature: &Tensor<T>, text_features: &Tensor<T>, scale: T) -> Result<Tensor<T>, ModelError> {
    let fd = image_feature.len();
    if text_features.ndim() != 2 || text_features.shape()[1] != fd {
        return Err(ModelError::Structure(format!(
            "logits: image feature of length {fd} against text features {:?}",
            text_features.shape()
        )));
    }
    let c = text_features.shape()[0];
    Ok(Tensor::from_fn(&[c], |i| {
        scale * crate::autodiff::dot(image_feature.data(), text_features.row(i))
    }))
}

/// Cross-entropy of logits against a class index.
pub fn loss<T: Scalar>(y: &Tensor<T>, label: usize) -> Result<T, ModelError> {
    if label >= y.len() {
        return Err(ModelError::Label {
            label,
            classes: y.len(),
        });
    }
    let mut g = Graph::new();
    let yn = g.constant(y.clone());
    let l = g.cross_entropy(yn, label)?;
    Ok(g.value(l).item())
}

/// `dL/dY = softmax(Y) - onehot(label)`, sign-stable at the label.
pub fn loss_grad<T: Scalar>(y: &Tensor<T>, label: usize) -> Result<Tensor<T>, ModelError> {
    if label >= y.len() {
        return Err(ModelError::Label {
            label,
            classes: y.len(),
        });
    }
    Ok(Tensor::from_vec(softmax_minus_onehot(y.data(), label)))
}
