use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum EncoderKind {
    /// One affine layer on the flattened image.
    Mlp,
    #[default]
    Conv2,
    Conv4,
    Conv8,
    Res1,
    Res3,
    Res6,
}

impl EncoderKind {
    pub const SWEEP: [EncoderKind; 6] = [
        EncoderKind::Conv2,
        EncoderKind::Conv4,
        EncoderKind::Conv8,
        EncoderKind::Res1,
        EncoderKind::Res3,
        EncoderKind::Res6,
    ];

    pub fn conv_blocks(self) -> usize {
        match self {
            EncoderKind::Conv2 => 2,
            EncoderKind::Conv4 => 4,
            EncoderKind::Conv8 => 8,
            _ => 0,
        }
    }

    pub fn res_blocks(self) -> usize {
        match self {
            EncoderKind::Res1 => 1,
            EncoderKind::Res3 => 3,
            EncoderKind::Res6 => 6,
            _ => 0,
        }
    }

    pub fn is_residual(self) -> bool {
        self.res_blocks() > 0
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EncoderKind::Mlp => "MLP",
            EncoderKind::Conv2 => "Conv2",
            EncoderKind::Conv4 => "Conv4",
            EncoderKind::Conv8 => "Conv8",
            EncoderKind::Res1 => "Res1",
            EncoderKind::Res3 => "Res3",
            EncoderKind::Res6 => "Res6",
        };
        f.write_str(s)
    }
}

impl FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "mlp" => EncoderKind::Mlp,
            "conv2" => EncoderKind::Conv2,
            "conv4" => EncoderKind::Conv4,
            "conv8" => EncoderKind::Conv8,
            "res1" => EncoderKind::Res1,
            "res3" => EncoderKind::Res3,
            "res6" => EncoderKind::Res6,
            _ => return Err(ModelError::Config(format!("unknown encoder structure {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderStructure {
    pub kind: EncoderKind,
    pub feature_dim: usize,
}

impl Default for EncoderStructure {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Conv2,
            feature_dim: 64,
        }
    }
}

/// Which parameters the client fine-tunes (and therefore leaks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PeftMode {
    #[default]
    SoftPrompt,
    TextAdapter,
    DoubleAdapter,
}

impl fmt::Display for PeftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeftMode::SoftPrompt => "SoftPrompt",
            PeftMode::TextAdapter => "TextAdapter",
            PeftMode::DoubleAdapter => "DoubleAdapter",
        })
    }
}

impl FromStr for PeftMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "softprompt" => PeftMode::SoftPrompt,
            "textadapter" => PeftMode::TextAdapter,
            "doubleadapter" => PeftMode::DoubleAdapter,
            _ => return Err(ModelError::Config(format!("unknown PEFT mode {s:?}"))),
        })
    }
}

impl PeftMode {
    pub const ALL: [PeftMode; 3] = [PeftMode::SoftPrompt, PeftMode::TextAdapter, PeftMode::DoubleAdapter];

    pub fn has_hot_prompt(self) -> bool {
        self == PeftMode::SoftPrompt
    }

    pub fn has_text_adapter(self) -> bool {
        self != PeftMode::SoftPrompt
    }

    pub fn has_image_adapter(self) -> bool {
        self == PeftMode::DoubleAdapter
    }
}

/// Architecture and initialization of a [`super::MultimodalModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder: EncoderStructure,
    /// Channels of every convolution in ConvN/ResN encoders.
    pub conv_channels: usize,
    pub embed_dim: usize,
    /// Soft-prompt tokens; `prompt_len * embed_dim` learnable scalars.
    pub prompt_len: usize,
    pub text_hidden: usize,
    /// Affine layers in the text MLP (relu between them).
    pub text_layers: usize,
    pub peft_mode: PeftMode,
    pub adapter_activation: Activation,
    pub logit_scale: f64,
    /// l2-normalize image and text features.
    pub normalize_features: bool,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            height: 28,
            width: 28,
            encoder: EncoderStructure::default(),
            conv_channels: 8,
            embed_dim: 64,
            prompt_len: 8,
            text_hidden: 64,
            text_layers: 2,
            peft_mode: PeftMode::SoftPrompt,
            adapter_activation: Activation::Relu,
            logit_scale: 100.0,
            normalize_features: true,
            class_names: (0..10).map(|d| DIGIT_NAMES[d].to_string()).collect(),
            seed: 0,
        }
    }
}

pub const DIGIT_NAMES: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim
    }

    pub fn adapter_hidden(&self) -> usize {
        (self.encoder.feature_dim / 4).max(1)
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("image dimensions must be positive");
        }
        if self.encoder.feature_dim == 0 || self.embed_dim == 0 || self.text_hidden == 0 {
            return bad("feature, embedding and hidden widths must be positive");
        }
        if self.text_layers == 0 {
            return bad("text MLP needs at least one layer");
        }
        if self.conv_channels == 0 && self.encoder.kind != EncoderKind::Mlp {
            return bad("conv_channels must be positive");
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return bad("logit_scale must be positive");
        }
        if self.peft_mode.has_hot_prompt() && self.prompt_len == 0 {
            return bad("SoftPrompt mode needs prompt_len > 0");
        }
        if self.class_names.is_empty() {
            return bad("class_names is empty");
        }
        for (i, name) in self.class_names.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(ModelError::EmptyClassName(i));
            }
            if self.class_names[..i].contains(name) {
                return Err(ModelError::DuplicateClass(name.clone()));
            }
        }
        Ok(())
    }
}
