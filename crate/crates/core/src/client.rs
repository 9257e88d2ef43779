//! Honest federated client: one plain SGD step on a private image, and
//! the update it uploads.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, MultimodalModel, PeftMode, PeftParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEAK_MAGIC: &[u8; 8] = b"PARVOLK1";
pub const LEAK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("client learning rate must be positive, got {0}")]
    Eta(f64),
    #[error("private image pixels must lie in [0, 1]")]
    PixelRange,
    #[error("not a leaked-update file")]
    NotLeakFile,
    #[error("leaked-update file is truncated")]
    Truncated,
    #[error("leaked-update version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed leaked-update payload: {0}")]
    Json(serde_json::Error),
    #[error("invalid leaked update: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the server sees from one client step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct LeakedUpdate<T> {
    pub version: u32,
    pub peft_mode: PeftMode,
    pub gradients: Option<PeftParams<T>>,
    /// `P - eta * grad`
    pub updated_params: Option<PeftParams<T>>,
    pub eta: T,
    pub channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub class_names: Vec<String>,
    pub model_fingerprint: String,
}

/// Runs the client's single vanilla-SGD step and packages the upload.
pub fn client_step<T: Scalar>(
    model: &MultimodalModel<T>,
    private_image: &Tensor<T>,
    label: usize,
    eta: T,
) -> Result<LeakedUpdate<T>, ClientError> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(ClientError::Eta(eta.as_f64()));
    }
    let x = model.check_image(private_image)?;
    if x.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(ClientError::PixelRange);
    }
    let (grads, _) = model.peft_grads(&x, label)?;
    let updated = model.peft().sgd_step(&grads, eta)?;
    let [channels, image_height, image_width] = model.config().image_shape();
    Ok(LeakedUpdate {
        version: LEAK_FORMAT_VERSION,
        peft_mode: model.mode(),
        gradients: Some(grads),
        updated_params: Some(updated),
        eta,
        channels,
        image_height,
        image_width,
        class_names: model.class_names().to_vec(),
        model_fingerprint: model.fingerprint(),
    })
}

impl<T: Scalar> LeakedUpdate<T> {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(ClientError::Eta(self.eta.as_f64()));
        }
        if self.gradients.is_none() && self.updated_params.is_none() {
            return Err(ClientError::Invalid("neither gradients nor updated parameters present".into()));
        }
        if let (Some(g), Some(u)) = (&self.gradients, &self.updated_params) {
            if !g.same_structure(u) {
                return Err(ClientError::Invalid("gradients and updated parameters differ in structure".into()));
            }
        }
        Ok(())
    }

    /// Gradient as transmitted, or recovered as `(P - P') / eta` from the
    /// server-side parameters when only `P'` was sent.
    pub fn gradient(&self, server_params: &PeftParams<T>) -> Result<PeftParams<T>, ClientError> {
        match (&self.gradients, &self.updated_params) {
            (Some(g), _) => Ok(g.clone()),
            (None, Some(u)) => {
                let eta = self.eta;
                Ok(server_params.zip_map(u, |p, q| (p - q) / eta)?)
            }
            (None, None) => Err(ClientError::Invalid("no gradient information".into())),
        }
    }

    /// Client-side parameters after the step, `P - eta * grad`.
    pub fn updated(&self, server_params: &PeftParams<T>) -> Result<PeftParams<T>, ClientError> {
        match (&self.updated_params, &self.gradients) {
            (Some(u), _) => Ok(u.clone()),
            (None, Some(g)) => Ok(server_params.sgd_step(g, self.eta)?),
            (None, None) => Err(ClientError::Invalid("no parameter information".into())),
        }
    }

    /// `max |P' + eta * grad - P|` against the server's hot parameters.
    pub fn consistency_error(&self, server_params: &PeftParams<T>) -> Result<T, ClientError> {
        let (Some(g), Some(u)) = (&self.gradients, &self.updated_params) else {
            return Ok(T::zero());
        };
        let eta = self.eta;
        let rebuilt = u.zip_map(g, |q, d| q + eta * d)?;
        Ok(rebuilt.max_abs_diff(server_params)?)
    }

    /// A warning when `model`'s frozen weights differ from the client's.
    pub fn fingerprint_warning(&self, model: &MultimodalModel<T>) -> Option<String> {
        let fp = model.fingerprint();
        (fp != self.model_fingerprint).then(|| {
            format!(
                "frozen-weight mismatch: leak was produced with {}, model is {}",
                short(&self.model_fingerprint),
                short(&fp)
            )
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ClientError> {
        let mut out = LEAK_MAGIC.to_vec();
        out.extend(serde_json::to_vec(self).map_err(ClientError::Json)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClientError> {
        if bytes.len() < LEAK_MAGIC.len() {
            return if LEAK_MAGIC.starts_with(bytes) && !bytes.is_empty() {
                Err(ClientError::Truncated)
            } else {
                Err(ClientError::NotLeakFile)
            };
        }
        let (magic, payload) = bytes.split_at(LEAK_MAGIC.len());
        if magic != LEAK_MAGIC {
            return Err(ClientError::NotLeakFile);
        }
        let json_err = |e: serde_json::Error| if e.is_eof() { ClientError::Truncated } else { ClientError::Json(e) };
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let value: serde_json::Value = serde_json::from_slice(payload).map_err(json_err)?;
        let probe: Probe = serde_json::from_value(value.clone()).map_err(ClientError::Json)?;
        if probe.version != LEAK_FORMAT_VERSION {
            return Err(ClientError::Version {
                found: probe.version,
                expected: LEAK_FORMAT_VERSION,
            });
        }
        let leak: Self = serde_json::from_value(value).map_err(ClientError::Json)?;
        leak.validate()?;
        Ok(leak)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Reads a leak file. With a model, a fingerprint mismatch is logged
    /// and returned as a warning; loading still succeeds.
    pub fn load(path: &Path, model: Option<&MultimodalModel<T>>) -> Result<(Self, Option<String>), ClientError> {
        let leak = Self::from_bytes(&std::fs::read(path)?)?;
        let warning = model.and_then(|m| leak.fingerprint_warning(m));
        if let Some(w) = &warning {
            log::warn!("{}: {w}", path.display());
        }
        Ok((leak, warning))
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}
