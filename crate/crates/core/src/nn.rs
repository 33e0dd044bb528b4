//! Dense layers with hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer computing `x · weight + bias`, with `weight` stored
/// as `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients of a [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense { weight: Array2::zeros((input, output)), bias: Array1::zeros(output) }
    }

    /// He-uniform weights, bound `sqrt(6 / fan_in)`, and zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        let weight = Array2::from_shape_fn((input, output), |_| rng.gen_range(-bound..=bound));
        Dense { weight, bias: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns the parameter gradients and the gradient with respect to `x`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, grad_out: ArrayView2<'_, f64>) -> (DenseGrad, Array2<f64>) {
        let grad = DenseGrad { weight: x.t().dot(&grad_out), bias: grad_out.sum_axis(Axis(0)) };
        (grad, grad_out.dot(&self.weight.t()))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad { weight: Array2::zeros(layer.weight.raw_dim()), bias: Array1::zeros(layer.bias.len()) }
    }

    pub fn add_assign(&mut self, other: &DenseGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut dyn RngCore) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_fn(shape, |_| if rng.gen_bool(keep) { scale } else { 0.0 })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
