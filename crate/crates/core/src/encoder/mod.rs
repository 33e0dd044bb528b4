//! Trainable text encoders behind one interface.
//!
//! [`HashedBow`] needs no external files. The pretrained families (BERT,
//! ELECTRA, ALBERT) are loaded from a local model directory holding
//! `config.json`, `model.safetensors` and either `vocab.txt` or
//! `tokenizer.json`, and run on the in-crate [`transformer`] implementation.

mod hashed;
pub mod tokenizer;
pub mod transformer;

use std::any::Any;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use hashed::HashedBow;
pub use transformer::{Family, Transformer};

use crate::nn::Mode;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("missing {artifact}: {path}")]
    MissingArtifact { artifact: &'static str, path: PathBuf },
    #[error("malformed {artifact}: {reason}")]
    Format { artifact: String, reason: String },
    #[error("cannot encode an empty batch")]
    EmptyBatch,
    #[error("gradient has shape {got:?}, expected {expected:?}")]
    GradShape { expected: (usize, usize), got: (usize, usize) },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EncoderKind {
    PretrainedSmallBert,
    PretrainedSmallElectra,
    PretrainedBaseAlbert,
    HashedBow,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::PretrainedSmallBert,
        EncoderKind::PretrainedSmallElectra,
        EncoderKind::PretrainedBaseAlbert,
        EncoderKind::HashedBow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::PretrainedSmallBert => "PRETRAINED_SMALL_BERT",
            EncoderKind::PretrainedSmallElectra => "PRETRAINED_SMALL_ELECTRA",
            EncoderKind::PretrainedBaseAlbert => "PRETRAINED_BASE_ALBERT",
            EncoderKind::HashedBow => "HASHED_BOW",
        }
    }

    pub fn family(self) -> Option<Family> {
        match self {
            EncoderKind::PretrainedSmallBert => Some(Family::Bert),
            EncoderKind::PretrainedSmallElectra => Some(Family::Electra),
            EncoderKind::PretrainedBaseAlbert => Some(Family::Albert),
            EncoderKind::HashedBow => None,
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "_").to_ascii_uppercase();
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == wanted)
            .ok_or_else(|| EncoderError::Config(format!("unknown encoder kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output width. Pretrained encoders must match their hidden size.
    pub embedding_dim: usize,
    /// Tokens per text, special tokens included; longer texts are truncated.
    pub max_sequence_length: usize,
    pub vocabulary_hash_buckets: usize,
    /// Model directory for the pretrained kinds.
    pub weights_path: Option<PathBuf>,
    /// Initialization seed for [`HashedBow`].
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::HashedBow,
            embedding_dim: 128,
            max_sequence_length: 128,
            vocabulary_hash_buckets: 4096,
            weights_path: None,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.embedding_dim == 0 {
            return Err(EncoderError::Config("embedding_dim must be positive".into()));
        }
        if self.max_sequence_length == 0 {
            return Err(EncoderError::Config("max_sequence_length must be positive".into()));
        }
        if self.kind == EncoderKind::HashedBow && self.vocabulary_hash_buckets == 0 {
            return Err(EncoderError::Config("vocabulary_hash_buckets must be positive".into()));
        }
        Ok(())
    }
}

/// Output of a forward pass plus whatever the encoder needs for backward.
pub struct EncoderPass {
    pub output: Array2<f64>,
    pub cache: Box<dyn Any + Send + Sync>,
}

impl fmt::Debug for EncoderPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncoderPass").field("output", &self.output.dim()).finish_non_exhaustive()
    }
}

/// A named parameter tensor stored row-major.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub name: &'a str,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

pub trait TextEncoder: Send + Sync {
    fn kind(&self) -> EncoderKind;

    fn embedding_dim(&self) -> usize;

    /// Embeds `texts` (batch × embedding_dim). TRAIN mode may apply dropout.
    fn forward(&self, texts: &[&str], mode: Mode, rng: &mut dyn RngCore) -> Result<EncoderPass, EncoderError>;

    /// Gradients of every parameter tensor, in [`TextEncoder::parameters`]
    /// order, given the gradient with respect to the output.
    fn backward(&self, pass: &EncoderPass, grad_output: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>, EncoderError>;

    fn parameters(&self) -> Vec<TensorRef<'_>>;

    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.data.len()).sum()
    }

    /// EVAL-mode embedding.
    fn encode(&self, texts: &[&str]) -> Result<Array2<f64>, EncoderError> {
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(texts, Mode::Eval, &mut unused)?.output)
    }
}

pub(crate) fn check_grad(pass: &EncoderPass, grad: ArrayView2<'_, f64>) -> Result<(), EncoderError> {
    if grad.dim() != pass.output.dim() {
        return Err(EncoderError::GradShape { expected: pass.output.dim(), got: grad.dim() });
    }
    Ok(())
}

/// Builds the encoder described by `config`.
pub fn load_encoder(config: &EncoderConfig) -> Result<Box<dyn TextEncoder>, EncoderError> {
    config.validate()?;
    match config.kind.family() {
        None => Ok(Box::new(HashedBow::new(config))),
        Some(family) => {
            let dir = config.weights_path.as_ref().ok_or_else(|| {
                EncoderError::Config(format!("{} requires weights_path (a local model directory)", config.kind))
            })?;
            let model = Transformer::from_dir(dir, family, config.max_sequence_length)?;
            if model.embedding_dim() != config.embedding_dim {
                return Err(EncoderError::Config(format!(
                    "embedding_dim is {} but the model in {} produces {}",
                    config.embedding_dim,
                    dir.display(),
                    model.embedding_dim()
                )));
            }
            Ok(Box::new(model))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in EncoderKind::ALL {
            assert_eq!(k.as_str().parse::<EncoderKind>().unwrap(), k);
        }
        assert_eq!("hashed-bow".parse::<EncoderKind>().unwrap(), EncoderKind::HashedBow);
        assert!(matches!("GPT".parse::<EncoderKind>(), Err(EncoderError::Config(_))));
        let toml_like: Result<EncoderConfig, _> = serde_json::from_str(r#"{"kind": "WORD2VEC"}"#);
        assert!(toml_like.is_err());
    }

    #[test]
    fn hashed_bow_needs_nothing_external() {
        let enc = load_encoder(&EncoderConfig::default()).unwrap();
        assert_eq!(enc.kind(), EncoderKind::HashedBow);
        assert_eq!(enc.embedding_dim(), 128);
        assert_eq!(enc.encode(&["a", "b c", "d e f"]).unwrap().dim(), (3, 128));
    }

    #[test]
    fn pretrained_without_weights_names_the_artifact() {
        let cfg = EncoderConfig { kind: EncoderKind::PretrainedSmallBert, ..Default::default() };
        assert!(matches!(load_encoder(&cfg), Err(EncoderError::Config(m)) if m.contains("weights_path")));
        let dir = tempfile::tempdir().unwrap();
        let cfg = EncoderConfig { weights_path: Some(dir.path().into()), ..cfg };
        let err = load_encoder(&cfg).err().unwrap();
        assert!(matches!(err, EncoderError::MissingArtifact { artifact: "config.json", .. }), "{err}");
    }

    #[test]
    fn invalid_dimensions() {
        let cfg = EncoderConfig { embedding_dim: 0, ..Default::default() };
        assert!(load_encoder(&cfg).is_err());
    }
}
