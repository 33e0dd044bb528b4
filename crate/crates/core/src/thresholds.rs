//! Per-task decision thresholds tuned by Youden's J on held-out scores.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Diagnostic;
use crate::loss::LossBatch;
use crate::registry::{Task, NUM_TASKS};

/// Sentinel candidates sit at `EPSILON` and `1 - EPSILON`.
pub const EPSILON: f64 = 1e-7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ThresholdError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("threshold for {task} is {value}, outside (0, 1)")]
    Range { task: Task, value: f64 },
    #[error("probabilities have {0} columns, expected 10")]
    Width(usize),
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

/// Outcome of tuning one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuned {
    pub threshold: f64,
    /// Youden's J at the chosen threshold.
    pub j: f64,
    pub diagnostic: Option<String>,
}

/// Candidate thresholds: sentinels plus midpoints of consecutive distinct
/// scores, ascending.
pub fn candidates(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(EPSILON);
    out.extend(s.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(1.0 - EPSILON);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Threshold maximizing `TPR - FPR`; ties go to the candidate nearest 0.5,
/// then to the lower one.
pub fn tune(scores: &[f64], labels: &[u8]) -> Result<Tuned, ThresholdError> {
    if scores.len() != labels.len() {
        return Err(ThresholdError::Length { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(ThresholdError::NonFinite(s));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(ThresholdError::Label(l));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as i128;
    let neg = labels.len() as i128 - pos;
    if pos == 0 || neg == 0 {
        return Ok(Tuned {
            threshold: DEFAULT_THRESHOLD,
            j: 0.0,
            diagnostic: Some(format!("only one class among {} labels; keeping {DEFAULT_THRESHOLD}", labels.len())),
        });
    }

    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sweep candidates upward; `k` counts pairs at or below the candidate.
    let (mut k, mut tp, mut fp) = (0usize, pos, neg);
    let mut best: Option<(i128, f64)> = None;
    for t in candidates(scores) {
        while k < pairs.len() && pairs[k].0 <= t {
            if pairs[k].1 == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            k += 1;
        }
        // J · pos · neg, exact in integers.
        let score = tp * neg - fp * pos;
        let better = match best {
            None => true,
            Some((b, bt)) => score > b || (score == b && (t - 0.5).abs() < (bt - 0.5).abs()),
        };
        if better {
            best = Some((score, t));
        }
    }
    let (score, threshold) = best.expect("at least the sentinels");
    Ok(Tuned { threshold, j: score as f64 / (pos * neg) as f64, diagnostic: None })
}

/// Youden's J of `score > threshold` against `labels`.
pub fn youden_j(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let hit = s > threshold;
        if l == 1 {
            p += 1;
            tp += usize::from(hit);
        } else {
            n += 1;
            fp += usize::from(hit);
        }
    }
    if p == 0 || n == 0 {
        return 0.0;
    }
    tp as f64 / p as f64 - fp as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub thresholds: BTreeMap<Task, f64>,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet { thresholds: Task::ALL.iter().map(|&t| (t, DEFAULT_THRESHOLD)).collect() }
    }
}

impl ThresholdSet {
    pub fn get(&self, task: Task) -> f64 {
        self.thresholds.get(&task).copied().unwrap_or(DEFAULT_THRESHOLD)
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        for (&task, &value) in &self.thresholds {
            if !(value > 0.0 && value < 1.0) {
                return Err(ThresholdError::Range { task, value });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ThresholdError> {
        let err = |reason: String| ThresholdError::File { path: path.display().to_string(), reason };
        let json = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ThresholdError> {
        let err = |reason: String| ThresholdError::File { path: path.display().to_string(), reason };
        let src = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut set: ThresholdSet = serde_json::from_str(&src).map_err(|e| err(e.to_string()))?;
        for task in Task::ALL {
            set.thresholds.entry(task).or_insert(DEFAULT_THRESHOLD);
        }
        set.validate()?;
        Ok(set)
    }
}

/// Binary predictions: 1 iff probability > threshold.
pub fn apply(probs: ArrayView2<'_, f64>, thresholds: &ThresholdSet) -> Result<Array2<u8>, ThresholdError> {
    if probs.ncols() != NUM_TASKS {
        return Err(ThresholdError::Width(probs.ncols()));
    }
    Ok(Array2::from_shape_fn(probs.raw_dim(), |(j, t)| u8::from(probs[[j, t]] > thresholds.get(Task::ALL[t]))))
}

/// Tunes every task on the rows labeled for it.
pub fn tune_all(probs: ArrayView2<'_, f64>, batch: &LossBatch) -> Result<(ThresholdSet, Vec<Diagnostic>), ThresholdError> {
    if probs.ncols() != NUM_TASKS {
        return Err(ThresholdError::Width(probs.ncols()));
    }
    let mut set = ThresholdSet::default();
    let mut diagnostics = Vec::new();
    for task in Task::ALL {
        let t = task.index();
        let (scores, labels): (Vec<f64>, Vec<u8>) = (0..batch.len())
            .filter(|&j| batch.mask[[j, t]] == 1.0)
            .map(|j| (probs[[j, t]], batch.labels[[j, t]] as u8))
            .unzip();
        let tuned = tune(&scores, &labels)?;
        if let Some(message) = tuned.diagnostic {
            diagnostics.push(Diagnostic { location: task.slug().to_string(), message });
        }
        set.thresholds.insert(task, tuned.threshold);
    }
    Ok((set, diagnostics))
}
