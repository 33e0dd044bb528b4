//! The double-branching classification head.
//!
//! ```text
//! embedding ─ shared(2) ─┬─ type IAC(2) ───────┬─ task(2) ─ out(1)   × 8
//!                        ├─ type IBM(2) ───────┴─ task(2) ─ out(1)
//!                        └─ type PROPAGANDA(2) ── task(2) ─ out(18) ─ max
//! ```
//!
//! Every hidden dense layer is followed by ReLU and (in TRAIN mode) inverted
//! dropout. The 27 raw logits pass through a sigmoid; the 18 propaganda
//! technique probabilities are max-pooled into the propaganda probability,
//! giving 10 outputs.
//!
//! Layers live in one vector in a fixed order: the two shared layers, then two
//! layers per task type, two per task, and one output layer per task.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::{dropout_mask, sigmoid, Dense, DenseGrad, Mode};
use crate::registry::{Task, TaskRegistry, TaskType, NUM_RAW_SLOTS, NUM_TASKS, NUM_TASK_TYPES, NUM_TECHNIQUES};

/// Dense layers in each shared, task-type and task-specific block.
pub const BLOCK_DEPTH: usize = 2;
const SHARED_START: usize = 0;
const TYPE_START: usize = SHARED_START + BLOCK_DEPTH;
const TASK_START: usize = TYPE_START + NUM_TASK_TYPES * BLOCK_DEPTH;
const OUTPUT_START: usize = TASK_START + NUM_TASKS * BLOCK_DEPTH;
/// Total number of dense layers in the head.
pub const NUM_LAYERS: usize = OUTPUT_START + NUM_TASKS;

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("invalid head configuration: {0}")]
    Config(String),
    #[error("input has {got} columns, head expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("expected {expected} technique probabilities, got {got}")]
    Arity { expected: usize, got: usize },
}

/// Named hidden widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SizePreset {
    Small,
    Medium,
    Large,
}

impl SizePreset {
    /// Uniform widths whose head sizes come closest to 17,024, 272,384 and
    /// 438,784 parameters on a 128-wide embedding.
    pub fn hidden_width(self) -> usize {
        match self {
            SizePreset::Small => 22,
            SizePreset::Medium => 97,
            SizePreset::Large => 124,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub registry: TaskRegistry,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            input_dim: 128,
            hidden_width: SizePreset::Small.hidden_width(),
            dropout_rate: 0.40,
            registry: TaskRegistry::standard(),
        }
    }
}

impl HeadConfig {
    pub fn with_preset(input_dim: usize, preset: SizePreset) -> Self {
        HeadConfig { input_dim, hidden_width: preset.hidden_width(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        if self.input_dim == 0 {
            return Err(HeadError::Config("input_dim must be positive".into()));
        }
        if self.hidden_width == 0 {
            return Err(HeadError::Config("hidden_width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(HeadError::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !self.registry.is_standard() {
            return Err(HeadError::Config("task registry does not match this build".into()));
        }
        Ok(())
    }

    /// Layer shapes `(in, out)` in storage order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden_width;
        let mut shapes = vec![(self.input_dim, h), (h, h)];
        shapes.extend(std::iter::repeat((h, h)).take((NUM_TASK_TYPES + NUM_TASKS) * BLOCK_DEPTH));
        shapes.extend(Task::ALL.iter().map(|t| (h, t.raw_slot_count())));
        shapes
    }
}

/// Exact number of head parameters. For uniform width `h` on a 128-wide
/// input this is `27h² + 183h + 27`.
pub fn param_count(config: &HeadConfig) -> usize {
    config.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
}

pub fn shared_layer(i: usize) -> usize {
    SHARED_START + i
}

pub fn type_layer(ty: TaskType, i: usize) -> usize {
    TYPE_START + ty.index() * BLOCK_DEPTH + i
}

pub fn task_layer(task: Task, i: usize) -> usize {
    TASK_START + task.index() * BLOCK_DEPTH + i
}

pub fn output_layer(task: Task) -> usize {
    OUTPUT_START + task.index()
}

/// Activations at every level of the network for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub encoder_out: Array2<f64>,
    pub shared_repr: Array2<f64>,
    pub type_repr: Vec<Array2<f64>>,
    pub task_repr: Vec<Array2<f64>>,
    /// batch × 27, propaganda techniques first.
    pub raw_logits: Array2<f64>,
    /// batch × 10 logits after pooling (propaganda: the max technique logit).
    pub pooled_logits: Array2<f64>,
    /// batch × 10.
    pub probabilities: Array2<f64>,
}

/// Input, ReLU mask and dropout mask of one hidden layer.
#[derive(Debug, Clone)]
struct HiddenCache {
    input: Array2<f64>,
    relu_mask: Array2<f64>,
    dropout: Option<Array2<f64>>,
}

/// A forward pass kept for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadPass {
    pub trace: ForwardTrace,
    hidden: Vec<Option<HiddenCache>>,
    /// Technique index that won the max pool, per row.
    argmax: Vec<usize>,
}

/// Head parameters plus configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub config: HeadConfig,
    pub layers: Vec<Dense>,
}

impl Head {
    /// Fresh parameters: He-uniform weights and zero biases.
    pub fn init(config: HeadConfig, rng: &mut dyn RngCore) -> Result<Self, HeadError> {
        config.validate()?;
        let layers = config.layer_shapes().into_iter().map(|(i, o)| Dense::he_uniform(i, o, rng)).collect();
        Ok(Head { config, layers })
    }

    /// All weights and biases zero.
    pub fn zeros(config: HeadConfig) -> Result<Self, HeadError> {
        config.validate()?;
        let layers = config.layer_shapes().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Head { config, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn hidden(
        &self,
        layer: usize,
        x: Array2<f64>,
        mode: Mode,
        rng: &mut dyn RngCore,
        cache: &mut [Option<HiddenCache>],
    ) -> Array2<f64> {
        let pre = self.layers[layer].forward(x.view());
        let relu_mask = pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let mut out = pre.mapv(|v| v.max(0.0));
        let dropout = match mode {
            Mode::Train if self.config.dropout_rate > 0.0 => {
                let m = dropout_mask(out.dim(), self.config.dropout_rate, rng);
                out *= &m;
                Some(m)
            }
            _ => None,
        };
        cache[layer] = Some(HiddenCache { input: x, relu_mask, dropout });
        out
    }

    /// Runs the head on a batch of embeddings.
    pub fn forward(&self, embeddings: ArrayView2<'_, f64>, mode: Mode, rng: &mut dyn RngCore) -> Result<HeadPass, HeadError> {
        if embeddings.ncols() != self.config.input_dim {
            return Err(HeadError::InputWidth { expected: self.config.input_dim, got: embeddings.ncols() });
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(HeadError::NonFinite);
        }
        let batch = embeddings.nrows();
        let mut cache: Vec<Option<HiddenCache>> = vec![None; NUM_LAYERS];

        let mut shared = embeddings.to_owned();
        for i in 0..BLOCK_DEPTH {
            shared = self.hidden(shared_layer(i), shared, mode, rng, &mut cache);
        }
        let mut type_repr = Vec::with_capacity(NUM_TASK_TYPES);
        for ty in TaskType::ALL {
            let mut h = shared.clone();
            for i in 0..BLOCK_DEPTH {
                h = self.hidden(type_layer(ty, i), h, mode, rng, &mut cache);
            }
            type_repr.push(h);
        }
        let mut task_repr = Vec::with_capacity(NUM_TASKS);
        let mut raw_logits = Array2::zeros((batch, NUM_RAW_SLOTS));
        for task in Task::ALL {
            let mut h = type_repr[task.task_type().index()].clone();
            for i in 0..BLOCK_DEPTH {
                h = self.hidden(task_layer(task, i), h, mode, rng, &mut cache);
            }
            let logits = self.layers[output_layer(task)].forward(h.view());
            raw_logits.slice_mut(s![.., task.raw_slots()]).assign(&logits);
            task_repr.push(h);
        }

        let mut pooled_logits = Array2::zeros((batch, NUM_TASKS));
        let mut probabilities = Array2::zeros((batch, NUM_TASKS));
        let mut argmax = vec![0; batch];
        for j in 0..batch {
            let row = raw_logits.row(j);
            for task in Task::ALL {
                let z = if task == Task::Propaganda {
                    let (best, z) = row
                        .slice(s![0..NUM_TECHNIQUES])
                        .iter()
                        .copied()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
                    argmax[j] = best;
                    z
                } else {
                    row[task.raw_slots().start]
                };
                pooled_logits[[j, task.index()]] = z;
                probabilities[[j, task.index()]] = sigmoid(z);
            }
        }

        Ok(HeadPass {
            trace: ForwardTrace {
                encoder_out: embeddings.to_owned(),
                shared_repr: shared,
                type_repr,
                task_repr,
                raw_logits,
                pooled_logits,
                probabilities,
            },
            hidden: cache,
            argmax,
        })
    }

    /// EVAL-mode forward.
    pub fn forward_eval(&self, embeddings: ArrayView2<'_, f64>) -> Result<ForwardTrace, HeadError> {
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(embeddings, Mode::Eval, &mut unused)?.trace)
    }

    fn hidden_backward(&self, layer: usize, pass: &HeadPass, mut grad: Array2<f64>, grads: &mut [DenseGrad]) -> Array2<f64> {
        let cache = pass.hidden[layer].as_ref().expect("hidden layer cached in forward");
        if let Some(mask) = &cache.dropout {
            grad *= mask;
        }
        grad *= &cache.relu_mask;
        let (g, gx) = self.layers[layer].backward(cache.input.view(), grad.view());
        grads[layer].add_assign(&g);
        gx
    }

    /// Backpropagates `d loss / d probabilities` (batch × 10). Returns the
    /// per-layer gradients and the gradient with respect to the embeddings.
    pub fn backward(&self, pass: &HeadPass, grad_probs: ArrayView2<'_, f64>) -> (Vec<DenseGrad>, Array2<f64>) {
        let trace = &pass.trace;
        let batch = trace.probabilities.nrows();
        let mut grads: Vec<DenseGrad> = self.layers.iter().map(DenseGrad::zeros_like).collect();

        // Through the sigmoid: dp/dz = p(1 - p).
        let mut grad_pooled = Array2::zeros((batch, NUM_TASKS));
        Zip::from(&mut grad_pooled)
            .and(&grad_probs)
            .and(&trace.probabilities)
            .for_each(|g, &gp, &p| *g = gp * p * (1.0 - p));

        let mut grad_type: Vec<Array2<f64>> =
            (0..NUM_TASK_TYPES).map(|_| Array2::zeros((batch, self.config.hidden_width))).collect();
        for task in Task::ALL {
            let width = task.raw_slot_count();
            let mut grad_logits = Array2::zeros((batch, width));
            if task == Task::Propaganda {
                for j in 0..batch {
                    grad_logits[[j, pass.argmax[j]]] = grad_pooled[[j, task.index()]];
                }
            } else {
                grad_logits.column_mut(0).assign(&grad_pooled.column(task.index()));
            }
            let out = output_layer(task);
            let (g, mut gh) = self.layers[out].backward(trace.task_repr[task.index()].view(), grad_logits.view());
            grads[out].add_assign(&g);
            for i in (0..BLOCK_DEPTH).rev() {
                gh = self.hidden_backward(task_layer(task, i), pass, gh, &mut grads);
            }
            grad_type[task.task_type().index()] += &gh;
        }

        let mut grad_shared = Array2::zeros((batch, self.config.hidden_width));
        for ty in TaskType::ALL {
            let mut gh = std::mem::take(&mut grad_type[ty.index()]);
            for i in (0..BLOCK_DEPTH).rev() {
                gh = self.hidden_backward(type_layer(ty, i), pass, gh, &mut grads);
            }
            grad_shared += &gh;
        }
        let mut gx = grad_shared;
        for i in (0..BLOCK_DEPTH).rev() {
            gx = self.hidden_backward(shared_layer(i), pass, gx, &mut grads);
        }
        (grads, gx)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Mutable flat views of every weight and bias tensor, in storage order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Flat views of gradient tensors in the same order as [`Head::tensors_mut`].
pub fn grad_tensors(grads: &[DenseGrad]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weight.as_slice().expect("standard layout"), g.bias.as_slice().expect("standard layout")])
        .collect()
}

/// Maximum of the 18 technique probabilities.
pub fn max_pool_propaganda(technique_probs: &[f64]) -> Result<f64, HeadError> {
    if technique_probs.len() != NUM_TECHNIQUES {
        return Err(HeadError::Arity { expected: NUM_TECHNIQUES, got: technique_probs.len() });
    }
    Ok(technique_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Sigmoid of every raw logit (batch × 27).
pub fn technique_probabilities(trace: &ForwardTrace) -> Array2<f64> {
    trace.raw_logits.slice(s![.., 0..NUM_TECHNIQUES]).mapv(sigmoid)
}
