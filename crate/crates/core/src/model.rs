//! Encoder plus head, trained end to end.

use ndarray::{Array2, ArrayView2};
use rand::RngCore;

use crate::encoder::{EncoderError, TextEncoder};
use crate::head::{grad_tensors, ForwardTrace, Head, HeadError};
use crate::loss::{masked_bce, masked_bce_with_grad, LossBatch, LossError, LossWeights};
use crate::nn::{DenseGrad, Mode};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("encoder emits {encoder} columns but the head expects {head}")]
    Width { encoder: usize, head: usize },
}

pub struct Model {
    pub encoder: Box<dyn TextEncoder>,
    pub head: Head,
    /// When false the encoder is frozen and receives no gradient.
    pub train_encoder: bool,
}

/// Gradients in [`Model::parameters_mut`] order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Option<Vec<Vec<f64>>>,
    pub head: Vec<DenseGrad>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.iter().flatten().map(Vec::as_slice).collect();
        out.extend(grad_tensors(&self.head));
        out
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("encoder", &self.encoder.kind())
            .field("head", &self.head.config)
            .field("train_encoder", &self.train_encoder)
            .finish()
    }
}

impl Model {
    pub fn new(encoder: Box<dyn TextEncoder>, head: Head) -> Result<Self, ModelError> {
        if encoder.embedding_dim() != head.config.input_dim {
            return Err(ModelError::Width { encoder: encoder.embedding_dim(), head: head.config.input_dim });
        }
        Ok(Model { encoder, head, train_encoder: true })
    }

    /// EVAL-mode forward with every intermediate activation.
    pub fn trace(&self, texts: &[&str]) -> Result<ForwardTrace, ModelError> {
        let emb = self.encoder.encode(texts)?;
        Ok(self.head.forward_eval(emb.view())?)
    }

    /// EVAL-mode probabilities (batch × 10).
    pub fn predict(&self, texts: &[&str]) -> Result<Array2<f64>, ModelError> {
        Ok(self.trace(texts)?.probabilities)
    }

    /// Probabilities for many texts, encoded `chunk` at a time.
    pub fn predict_chunked(&self, texts: &[&str], chunk: usize) -> Result<Array2<f64>, ModelError> {
        let mut parts = Vec::new();
        for c in texts.chunks(chunk.max(1)) {
            parts.push(self.predict(c)?);
        }
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
    }

    pub fn loss(&self, texts: &[&str], batch: &LossBatch, weights: &LossWeights) -> Result<f64, ModelError> {
        let probs = self.predict(texts)?;
        Ok(masked_bce(probs.view(), batch, weights)?)
    }

    /// Loss and gradients for one batch.
    pub fn loss_and_grads(
        &self,
        texts: &[&str],
        batch: &LossBatch,
        weights: &LossWeights,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, Gradients), ModelError> {
        let enc_pass = self.encoder.forward(texts, mode, rng)?;
        let head_pass = self.head.forward(enc_pass.output.view(), mode, rng)?;
        let (loss, grad_probs) = masked_bce_with_grad(head_pass.trace.probabilities.view(), batch, weights)?;
        let (head, grad_emb) = self.head.backward(&head_pass, grad_probs.view());
        let encoder = if self.train_encoder { Some(self.encoder.backward(&enc_pass, grad_emb.view())?) } else { None };
        Ok((loss, Gradients { encoder, head }))
    }

    /// Trainable tensors: encoder (when trained) then head.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = if self.train_encoder { self.encoder.parameters_mut() } else { Vec::new() };
        out.extend(self.head.tensors_mut());
        out
    }

    /// Copy of every parameter, encoder first, for restoring later.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            encoder: self.encoder.parameters().iter().map(|t| t.data.to_vec()).collect(),
            head: self.head.clone(),
        }
    }

    pub fn restore(&mut self, snap: &Snapshot) {
        for (dst, src) in self.encoder.parameters_mut().into_iter().zip(&snap.encoder) {
            dst.copy_from_slice(src);
        }
        self.head = snap.head.clone();
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.encoder.parameters().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Parameter values at one point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub encoder: Vec<Vec<f64>>,
    pub head: Head,
}
