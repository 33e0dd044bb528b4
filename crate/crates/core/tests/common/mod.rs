#![allow(dead_code)]

use argmine::loss::{LossBatch, LossWeights, EPSILON};
use argmine::registry::{Task, TaskType, NUM_TASKS};
use ndarray::Array2;
use rand::Rng;

/// Scalar reference for the weighted masked loss. Loops only, no array
/// arithmetic.
pub fn oracle_loss(probs: &Array2<f64>, batch: &LossBatch, weights: &LossWeights) -> f64 {
    let mut total = 0.0;
    for ty in TaskType::ALL {
        let mut n_rows = 0usize;
        for j in 0..batch.row_types.len() {
            if batch.row_types[j] == ty {
                n_rows += 1;
            }
        }
        if n_rows == 0 {
            continue;
        }
        let mut sum = 0.0;
        for j in 0..batch.row_types.len() {
            if batch.row_types[j] != ty {
                continue;
            }
            for task in Task::ALL {
                if task.task_type() != ty {
                    continue;
                }
                let t = task.index();
                if batch.mask[[j, t]] == 0.0 {
                    continue;
                }
                let mut p = probs[[j, t]];
                if p < EPSILON {
                    p = EPSILON;
                }
                if p > 1.0 - EPSILON {
                    p = 1.0 - EPSILON;
                }
                let term = if batch.labels[[j, t]] == 1.0 {
                    weights.class_weights[t][1] * -p.ln()
                } else {
                    weights.class_weights[t][0] * -(1.0 - p).ln()
                };
                sum += term;
            }
        }
        total += weights.type_weights[ty.index()] * sum / (ty.task_count() as f64 * n_rows as f64);
    }
    total
}

/// A random batch with valid masks, labels and probabilities.
pub fn random_batch<R: Rng>(rng: &mut R, n: usize) -> (Array2<f64>, LossBatch) {
    let mut labels = Array2::zeros((n, NUM_TASKS));
    let mut mask = Array2::zeros((n, NUM_TASKS));
    let mut row_types = Vec::with_capacity(n);
    for j in 0..n {
        let ty = TaskType::ALL[rng.gen_range(0..3)];
        let tasks: Vec<Task> = ty.tasks().collect();
        let forced = tasks[rng.gen_range(0..tasks.len())];
        for &task in &tasks {
            if task == forced || rng.gen_bool(0.5) {
                mask[[j, task.index()]] = 1.0;
                labels[[j, task.index()]] = f64::from(u8::from(rng.gen_bool(0.5)));
            }
        }
        row_types.push(ty);
    }
    let probs = Array2::from_shape_fn((n, NUM_TASKS), |_| match rng.gen_range(0..20) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..1.0),
    });
    (probs, LossBatch { labels, mask, row_types })
}

pub fn random_weights<R: Rng>(rng: &mut R) -> LossWeights {
    let raw: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..1.0));
    let s: f64 = raw.iter().sum();
    LossWeights {
        type_weights: raw.map(|v| v / s),
        class_weights: std::array::from_fn(|_| {
            let a = rng.gen_range(0.05..1.95);
            [a, 2.0 - a]
        }),
    }
}
