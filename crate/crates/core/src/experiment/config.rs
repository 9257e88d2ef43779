use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::autodiff::Activation;
use crate::data::{self, Dataset};
use crate::model::{EncoderKind, EncoderStructure, ModelConfig, PeftMode};
use crate::scalar::Scalar;

use super::ExperimentError;

pub const IMAGE_SIZES: [usize; 3] = [28, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Stroke-rendered digits generated in memory.
    SyntheticDigits { count: usize, seed: u64 },
    MnistIdx { images: PathBuf, labels: PathBuf },
    Cifar10 { path: PathBuf },
    ImageDir { root: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::SyntheticDigits { count: 1000, seed: 0 }
    }
}

impl DatasetSpec {
    /// Relative paths resolve against `base` (the config file's directory).
    pub fn resolved(&self, base: &Path) -> Self {
        let fix = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        match self {
            DatasetSpec::SyntheticDigits { .. } => self.clone(),
            DatasetSpec::MnistIdx { images, labels } => DatasetSpec::MnistIdx {
                images: fix(images),
                labels: fix(labels),
            },
            DatasetSpec::Cifar10 { path } => DatasetSpec::Cifar10 { path: fix(path) },
            DatasetSpec::ImageDir { root } => DatasetSpec::ImageDir { root: fix(root) },
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSpec::SyntheticDigits { .. } => vec![],
            DatasetSpec::MnistIdx { images, labels } => vec![images, labels],
            DatasetSpec::Cifar10 { path } => vec![path],
            DatasetSpec::ImageDir { root } => vec![root],
        }
    }

    pub fn load<T: Scalar>(&self, image_size: usize) -> Result<Dataset<T>, ExperimentError> {
        Ok(match self {
            DatasetSpec::SyntheticDigits { count, seed } => data::synthetic_digits(*count, image_size, *seed),
            DatasetSpec::MnistIdx { images, labels } => data::load_mnist_idx(images, labels)?,
            DatasetSpec::Cifar10 { path } => data::load_cifar10_bin(path)?,
            DatasetSpec::ImageDir { root } => data::load_image_dir(root)?,
        })
    }
}

/// One JSON document drives every subcommand. All fields default; unknown
/// fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub image_size: usize,
    /// Channels the image encoder sees; RGB data is converted by luminance
    /// for a grayscale encoder.
    pub channels: usize,
    pub peft_mode: PeftMode,
    pub encoder: EncoderStructure,
    /// `None`: relu, or softplus in double-adapter mode.
    pub adapter_activation: Option<Activation>,
    pub text_layers: usize,
    pub attack: AttackConfig,
    /// Client learning rate of the leaked step.
    pub eta: f64,
    pub runs: usize,
    /// Run `k` uses seed `seed + k` for the model, the image draw and the
    /// attack.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Structures visited by `sweep`.
    pub structures: Vec<EncoderKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            image_size: 28,
            channels: 1,
            peft_mode: PeftMode::SoftPrompt,
            encoder: EncoderStructure {
                kind: EncoderKind::Conv2,
                feature_dim: 512,
            },
            adapter_activation: None,
            text_layers: 2,
            attack: AttackConfig::default(),
            eta: 0.01,
            runs: 10,
            seed: 0,
            output_dir: PathBuf::from("out"),
            structures: EncoderKind::SWEEP.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file; dataset paths resolve relative
    /// to the file.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(path.to_path_buf(), e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = cfg.dataset.resolved(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !IMAGE_SIZES.contains(&self.image_size) {
            return bad(format!("image_size must be one of {IMAGE_SIZES:?}, got {}", self.image_size));
        }
        if !matches!(self.channels, 1 | 3) {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.runs == 0 {
            return bad("runs must be positive".into());
        }
        if self.structures.is_empty() {
            return bad("structures is empty".into());
        }
        if let DatasetSpec::SyntheticDigits { count: 0, .. } = self.dataset {
            return bad("synthetic dataset needs count > 0".into());
        }
        for p in self.dataset.paths() {
            if !p.exists() {
                return bad(format!("dataset path {} does not exist", p.display()));
            }
        }
        self.attack.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.model_config(self.peft_mode, self.encoder.kind, vec!["a".into(), "b".into()], 0)
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn run_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn activation_for(&self, mode: PeftMode) -> Activation {
        self.adapter_activation.unwrap_or(if mode == PeftMode::DoubleAdapter {
            Activation::Softplus
        } else {
            Activation::Relu
        })
    }

    pub fn model_config(&self, mode: PeftMode, kind: EncoderKind, class_names: Vec<String>, seed: u64) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            height: self.image_size,
            width: self.image_size,
            encoder: EncoderStructure {
                kind,
                feature_dim: self.encoder.feature_dim,
            },
            text_layers: self.text_layers,
            peft_mode: mode,
            adapter_activation: self.activation_for(mode),
            class_names,
            seed,
            ..ModelConfig::default()
        }
    }
}
