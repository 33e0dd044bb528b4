//! Task-type- and class-weighted masked binary cross-entropy.
//!
//! For a batch, with `D_k` the rows of task type `k`, `T_k` its tasks, `m` the
//! label mask and `w_t^y` the weight of the realized class,
//!
//! ```text
//! L = Σ_k ν_k · 1/(|T_k| · |D_k ∩ batch|) · Σ_{j ∈ D_k} Σ_{t ∈ T_k} m_jt · w_t^{y_jt} · BCE(p_jt, y_jt)
//! ```
//!
//! Types absent from the batch contribute nothing. The evaluation is
//! vectorized: an elementwise BCE matrix is multiplied by the mask and a class
//! weight matrix, reduced per row, and folded per type through a one-hot
//! row-type matrix.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, DatasetStats, Record};
use crate::registry::{Task, TaskType, NUM_TASKS, NUM_TASK_TYPES};

/// Probabilities are clipped into `[EPSILON, 1 - EPSILON]` before the log.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {row}: {reason}")]
    Mask { row: usize, reason: String },
    #[error(transparent)]
    Stats(#[from] CorpusError),
    #[error("task type {0} has no training records")]
    EmptyType(TaskType),
}

/// Labels, label mask and row task types of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    /// batch × 10; values at masked-out entries are ignored.
    pub labels: Array2<f64>,
    /// batch × 10 of 0/1; 1 iff the record carries a label for the task.
    pub mask: Array2<f64>,
    pub row_types: Vec<TaskType>,
}

impl LossBatch {
    pub fn from_records(records: &[&Record]) -> Self {
        Self::build(records, None)
    }

    /// Batch whose mask keeps only `task`.
    pub fn for_task(records: &[&Record], task: Task) -> Self {
        Self::build(records, Some(task))
    }

    fn build(records: &[&Record], only: Option<Task>) -> Self {
        let n = records.len();
        let mut labels = Array2::zeros((n, NUM_TASKS));
        let mut mask = Array2::zeros((n, NUM_TASKS));
        for (j, r) in records.iter().enumerate() {
            for (&task, &y) in &r.labels {
                if only.is_some_and(|t| t != task) {
                    continue;
                }
                labels[[j, task.index()]] = f64::from(y);
                mask[[j, task.index()]] = 1.0;
            }
        }
        LossBatch { labels, mask, row_types: records.iter().map(|r| r.task_type).collect() }
    }

    pub fn len(&self) -> usize {
        self.row_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_types.is_empty()
    }

    /// Shapes agree, mask entries are 0/1, each row is labeled for at least
    /// one task and only for tasks of its own type.
    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.row_types.len();
        if self.labels.dim() != (n, NUM_TASKS) || self.mask.dim() != (n, NUM_TASKS) {
            return Err(LossError::Shape(format!(
                "labels {:?}, mask {:?}, {n} row types",
                self.labels.dim(),
                self.mask.dim()
            )));
        }
        for (j, ty) in self.row_types.iter().enumerate() {
            let mut any = false;
            for task in Task::ALL {
                let m = self.mask[[j, task.index()]];
                if m != 0.0 && m != 1.0 {
                    return Err(LossError::Mask { row: j, reason: format!("mask value {m}") });
                }
                if m == 1.0 {
                    if task.task_type() != *ty {
                        return Err(LossError::Mask { row: j, reason: format!("{task} masked in on a {ty} row") });
                    }
                    any = true;
                }
            }
            if !any {
                return Err(LossError::Mask { row: j, reason: "no labeled task".into() });
            }
        }
        Ok(())
    }
}

/// Task-type weights `ν` and per-task class weights `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Indexed by [`TaskType::index`].
    pub type_weights: [f64; NUM_TASK_TYPES],
    /// Indexed by [`Task::index`], then label.
    pub class_weights: [[f64; 2]; NUM_TASKS],
}

impl LossWeights {
    pub fn uniform() -> Self {
        LossWeights { type_weights: [1.0; NUM_TASK_TYPES], class_weights: [[1.0; 2]; NUM_TASKS] }
    }

    pub fn from_stats(stats: &DatasetStats) -> Result<Self, LossError> {
        let sizes = TaskType::ALL.map(|t| stats.type_size(t));
        Ok(LossWeights { type_weights: compute_type_weights(sizes)?, class_weights: compute_class_weights(stats)? })
    }

    pub fn type_weight(&self, ty: TaskType) -> f64 {
        self.type_weights[ty.index()]
    }

    pub fn class_weight(&self, task: Task, label: u8) -> f64 {
        self.class_weights[task.index()][usize::from(label.min(1))]
    }
}

/// `ν_k = (1/|D_k|) / Σ_k' (1/|D_k'|)`.
///
/// Evaluated as `Π_{i≠k}|D_i| / Σ_j Π_{i≠j}|D_i|` in integers followed by one
/// division, so simple ratios come out correctly rounded.
pub fn compute_type_weights(sizes: [usize; NUM_TASK_TYPES]) -> Result<[f64; NUM_TASK_TYPES], LossError> {
    if let Some(k) = sizes.iter().position(|&n| n == 0) {
        return Err(LossError::EmptyType(TaskType::ALL[k]));
    }
    let others = |k: usize| -> u128 {
        sizes.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &n)| n as u128).product()
    };
    let numerators: Vec<u128> = (0..NUM_TASK_TYPES).map(others).collect();
    let total: u128 = numerators.iter().sum();
    let mut out = [0.0; NUM_TASK_TYPES];
    for (o, &num) in out.iter_mut().zip(&numerators) {
        *o = num as f64 / total as f64;
    }
    Ok(out)
}

/// `w_t^c = (1/p_t^c) / mean_c(1/p_t^c)`, so each task's weights average 1.
pub fn compute_class_weights(stats: &DatasetStats) -> Result<[[f64; 2]; NUM_TASKS], LossError> {
    let mut out = [[1.0; 2]; NUM_TASKS];
    for task in Task::ALL {
        let s = stats.tasks.get(&task).ok_or(CorpusError::MissingTask(task))?;
        out[task.index()] = class_weights_from_balance(s.class_balance).map_err(|c| {
            LossError::Stats(CorpusError::MissingClass { task, class: task.classes()[c] })
        })?;
    }
    Ok(out)
}

/// Normalized inverse-enrichment weights for one task. Errors with the
/// index of an empty class.
pub fn class_weights_from_balance(balance: [f64; 2]) -> Result<[f64; 2], usize> {
    if let Some(c) = balance.iter().position(|&p| !(p > 0.0)) {
        return Err(c);
    }
    let inv = balance.map(|p| 1.0 / p);
    let mean = (inv[0] + inv[1]) / 2.0;
    Ok(inv.map(|v| v / mean))
}

fn check_shapes(probs: ArrayView2<'_, f64>, batch: &LossBatch) -> Result<(), LossError> {
    if probs.dim() != batch.labels.dim() {
        return Err(LossError::Shape(format!(
            "probabilities {:?} vs labels {:?}",
            probs.dim(),
            batch.labels.dim()
        )));
    }
    batch.validate()
}

/// Per-row scale `ν_k / (|T_k| · n_k)` for the row's type `k`.
fn row_scales(batch: &LossBatch, weights: &LossWeights) -> Array1<f64> {
    let mut onehot = Array2::<f64>::zeros((batch.len(), NUM_TASK_TYPES));
    for (j, ty) in batch.row_types.iter().enumerate() {
        onehot[[j, ty.index()]] = 1.0;
    }
    let counts = onehot.sum_axis(Axis(0));
    let per_type = Array1::from_iter(TaskType::ALL.iter().map(|&ty| {
        let n = counts[ty.index()];
        if n > 0.0 {
            weights.type_weight(ty) / (ty.task_count() as f64 * n)
        } else {
            0.0
        }
    }));
    onehot.dot(&per_type)
}

/// Matrix of `w_t^{y_jt}` (batch × 10).
fn class_weight_matrix(batch: &LossBatch, weights: &LossWeights) -> Array2<f64> {
    let w0 = Array1::from_iter(weights.class_weights.iter().map(|w| w[0]));
    let w1 = Array1::from_iter(weights.class_weights.iter().map(|w| w[1]));
    &batch.labels * &w1 + (1.0 - &batch.labels) * &w0
}

/// The weighted masked loss.
pub fn masked_bce(probs: ArrayView2<'_, f64>, batch: &LossBatch, weights: &LossWeights) -> Result<f64, LossError> {
    check_shapes(probs, batch)?;
    let p = probs.mapv(|v| v.clamp(EPSILON, 1.0 - EPSILON));
    let y = &batch.labels;
    let bce = -(y * &p.mapv(f64::ln) + (1.0 - y) * &p.mapv(|v| (1.0 - v).ln()));
    let weighted = &bce * &batch.mask * &class_weight_matrix(batch, weights);
    let per_row = weighted.sum_axis(Axis(1));
    Ok(per_row.dot(&row_scales(batch, weights)))
}

/// The loss and its gradient with respect to the probabilities. The
/// gradient is zero where clipping is active.
pub fn masked_bce_with_grad(
    probs: ArrayView2<'_, f64>,
    batch: &LossBatch,
    weights: &LossWeights,
) -> Result<(f64, Array2<f64>), LossError> {
    let loss = masked_bce(probs, batch, weights)?;
    let coeff = &batch.mask * &class_weight_matrix(batch, weights) * &row_scales(batch, weights).insert_axis(Axis(1));
    let mut grad = Array2::zeros(probs.raw_dim());
    Zip::from(&mut grad)
        .and(&probs)
        .and(&batch.labels)
        .and(&coeff)
        .for_each(|g, &p, &y, &c| {
            if c != 0.0 && p > EPSILON && p < 1.0 - EPSILON {
                *g = c * ((1.0 - y) / (1.0 - p) - y / p);
            }
        });
    Ok((loss, grad))
}

/// Per-type losses `L(ŷ|y, D_k)` before the `ν` weighting.
pub fn per_type_losses(
    probs: ArrayView2<'_, f64>,
    batch: &LossBatch,
    weights: &LossWeights,
) -> Result<[f64; NUM_TASK_TYPES], LossError> {
    let mut out = [0.0; NUM_TASK_TYPES];
    for ty in TaskType::ALL {
        let mut w = weights.clone();
        w.type_weights = [0.0; NUM_TASK_TYPES];
        w.type_weights[ty.index()] = 1.0;
        out[ty.index()] = masked_bce(probs, batch, &w)?;
    }
    Ok(out)
}
