//! Hashed bag-of-words encoder: lowercased tokens are hashed into buckets,
//! the bucket counts are projected linearly to the embedding width.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};

use super::{check_grad, EncoderConfig, EncoderError, EncoderKind, EncoderPass, TensorRef, TextEncoder};
use crate::nn::Mode;
use crate::{seed, text};

#[derive(Debug, Clone, PartialEq)]
pub struct HashedBow {
    buckets: usize,
    max_tokens: usize,
    /// buckets × dim.
    pub weight: Array2<f64>,
    /// 1 × dim.
    pub bias: Array2<f64>,
}

/// Sparse bucket counts, sorted by bucket.
type Counts = Vec<(usize, f64)>;

impl HashedBow {
    /// Weights uniform in `±sqrt(3 / max_sequence_length)`, zero bias.
    pub fn new(config: &EncoderConfig) -> Self {
        let mut rng = seed::rng(config.seed, "encoder/hashed_bow");
        let bound = (3.0 / config.max_sequence_length as f64).sqrt();
        let weight = Array2::from_shape_fn((config.vocabulary_hash_buckets, config.embedding_dim), |_| {
            rng.gen_range(-bound..=bound)
        });
        HashedBow {
            buckets: config.vocabulary_hash_buckets,
            max_tokens: config.max_sequence_length,
            weight,
            bias: Array2::zeros((1, config.embedding_dim)),
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn bucket(&self, token: &str) -> usize {
        (text::fnv1a(token.as_bytes()) % self.buckets as u64) as usize
    }

    /// Bucket counts of the first `max_sequence_length` tokens.
    pub fn bucket_counts(&self, text: &str) -> Counts {
        let mut counts = std::collections::BTreeMap::new();
        for tok in text::normalized_tokens(text).iter().take(self.max_tokens) {
            *counts.entry(self.bucket(tok)).or_insert(0.0) += 1.0;
        }
        counts.into_iter().collect()
    }
}

impl TextEncoder for HashedBow {
    fn kind(&self) -> EncoderKind {
        EncoderKind::HashedBow
    }

    fn embedding_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(&self, texts: &[&str], _mode: Mode, _rng: &mut dyn RngCore) -> Result<EncoderPass, EncoderError> {
        if texts.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let counts: Vec<Counts> = texts.iter().map(|t| self.bucket_counts(t)).collect();
        let mut output = Array2::zeros((texts.len(), self.embedding_dim()));
        for (mut row, c) in output.axis_iter_mut(Axis(0)).zip(&counts) {
            row.assign(&self.bias.row(0));
            for &(b, n) in c {
                row.scaled_add(n, &self.weight.row(b));
            }
        }
        Ok(EncoderPass { output, cache: Box::new(counts) })
    }

    fn backward(&self, pass: &EncoderPass, grad: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>, EncoderError> {
        check_grad(pass, grad)?;
        let counts = pass.cache.downcast_ref::<Vec<Counts>>().expect("hashed bow cache");
        let mut gw = Array2::zeros(self.weight.raw_dim());
        for (g, c) in grad.axis_iter(Axis(0)).zip(counts) {
            for &(b, n) in c {
                gw.row_mut(b).scaled_add(n, &g);
            }
        }
        let gb = grad.sum_axis(Axis(0));
        Ok(vec![gw.into_raw_vec_and_offset().0, gb.to_vec()])
    }

    fn parameters(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef { name: "projection.weight", shape: self.weight.dim(), data: self.weight.as_slice().expect("standard layout") },
            TensorRef { name: "projection.bias", shape: self.bias.dim(), data: self.bias.as_slice().expect("standard layout") },
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}
