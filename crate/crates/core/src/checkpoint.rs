//! Versioned JSON checkpoints and run manifests.
//!
//! Tensors are stored as base64 of little-endian f64 bytes, so a save/load
//! round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{load_encoder, EncoderConfig, EncoderError};
use crate::head::{Head, HeadConfig, HeadError};
use crate::loss::LossWeights;
use crate::model::{Model, ModelError};
use crate::nn::Dense;
use crate::thresholds::ThresholdSet;
use crate::train::{TrainConfig, TrainHistory};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("checkpoint format version {found}, this build reads {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("tensor {name}: {reason}")]
    Tensor { name: String, reason: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: (usize, usize),
    pub data: String,
}

impl Tensor {
    pub fn encode(name: &str, shape: (usize, usize), values: &[f64]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Tensor { name: name.to_string(), shape, data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Vec<f64>, CheckpointError> {
        let err = |reason: String| CheckpointError::Tensor { name: self.name.clone(), reason };
        let bytes = STANDARD.decode(&self.data).map_err(|e| err(e.to_string()))?;
        if bytes.len() != self.shape.0 * self.shape.1 * 8 {
            return Err(err(format!("{} bytes for shape {:?}", bytes.len(), self.shape)));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub encoder_tensors: Vec<Tensor>,
    pub head: HeadConfig,
    pub head_tensors: Vec<Tensor>,
    pub train_encoder: bool,
    pub loss_weights: LossWeights,
    pub train_config: TrainConfig,
    pub history: Option<TrainHistory>,
    pub thresholds: Option<ThresholdSet>,
}

fn head_tensors(head: &Head) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(head.layers.len() * 2);
    for (i, layer) in head.layers.iter().enumerate() {
        let w = layer.weight.as_standard_layout();
        out.push(Tensor::encode(&format!("layer{i}.weight"), w.dim(), w.as_slice().expect("standard layout")));
        let b = layer.bias.to_vec();
        out.push(Tensor::encode(&format!("layer{i}.bias"), (1, b.len()), &b));
    }
    out
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        encoder: &EncoderConfig,
        loss_weights: &LossWeights,
        train_config: &TrainConfig,
        history: Option<&TrainHistory>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            encoder: encoder.clone(),
            encoder_tensors: model.encoder.parameters().iter().map(|t| Tensor::encode(t.name, t.shape, t.data)).collect(),
            head: model.head.config.clone(),
            head_tensors: head_tensors(&model.head),
            train_encoder: model.train_encoder,
            loss_weights: loss_weights.clone(),
            train_config: train_config.clone(),
            history: history.cloned(),
            thresholds: None,
        }
    }

    /// Rebuilds the model: the encoder is loaded from its config, then every
    /// stored tensor overwrites the parameter of the same name.
    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        let mut encoder = load_encoder(&self.encoder)?;
        let names: Vec<(String, (usize, usize))> =
            encoder.parameters().iter().map(|t| (t.name.to_string(), t.shape)).collect();
        let stored: BTreeMap<&str, &Tensor> = self.encoder_tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if stored.len() != names.len() {
            return Err(CheckpointError::Tensor {
                name: "encoder".into(),
                reason: format!("{} stored tensors, encoder has {}", stored.len(), names.len()),
            });
        }
        for ((name, shape), dst) in names.iter().zip(encoder.parameters_mut()) {
            let t = stored.get(name.as_str()).ok_or_else(|| CheckpointError::Tensor {
                name: name.clone(),
                reason: "missing from checkpoint".into(),
            })?;
            if t.shape != *shape {
                return Err(CheckpointError::Tensor { name: name.clone(), reason: format!("shape {:?}, expected {shape:?}", t.shape) });
            }
            dst.copy_from_slice(&t.decode()?);
        }

        let mut head = Head::zeros(self.head.clone())?;
        if self.head_tensors.len() != head.layers.len() * 2 {
            return Err(CheckpointError::Tensor {
                name: "head".into(),
                reason: format!("{} stored tensors, expected {}", self.head_tensors.len(), head.layers.len() * 2),
            });
        }
        for (i, (layer, pair)) in head.layers.iter_mut().zip(self.head_tensors.chunks(2)).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            let shape = layer.weight.dim();
            if w.name != format!("layer{i}.weight") || w.shape != shape || b.shape != (1, shape.1) {
                return Err(CheckpointError::Tensor { name: w.name.clone(), reason: format!("expected layer{i} with shape {shape:?}") });
            }
            *layer = Dense {
                weight: Array2::from_shape_vec(shape, w.decode()?).expect("checked shape"),
                bias: Array1::from(b.decode()?),
            };
        }
        let mut model = Model::new(encoder, head)?;
        model.train_encoder = self.train_encoder;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_string(self).map_err(|e| CheckpointError::Parse { path: path.display().to_string(), reason: e.to_string() })?;
        std::fs::write(path, json).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let p = path.display().to_string();
        let src = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: p.clone(), source })?;
        let version: serde_json::Value = serde_json::from_str(&src).map_err(|e| CheckpointError::Parse { path: p.clone(), reason: e.to_string() })?;
        let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(CheckpointError::Version { found });
        }
        serde_json::from_value(version).map_err(|e| CheckpointError::Parse { path: p, reason: e.to_string() })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Everything needed to re-run a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, resolved_config: &str) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(resolved_config.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable") + "\n")
    }
}
