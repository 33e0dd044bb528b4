//! Browser bindings: t-SNE of synthetic blobs, threshold tuning on
//! simulated scores, and loss weights from corpus sizes and balances.
//!
//! Every export returns a JSON string so the page needs no extra glue.

use argmine::diagnostics::{gaussian_blobs, render_svg, silhouette, tsne, TsneConfig};
use argmine::loss::{class_weights_from_balance, compute_type_weights};
use argmine::registry::{Task, TaskType, NUM_TASKS, NUM_TASK_TYPES};
use argmine::seed;
use argmine::thresholds::{candidates, tune, youden_j};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

#[derive(Debug, Serialize)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    pub silhouette_input: f64,
    pub silhouette_projection: f64,
    pub svg: String,
}

/// Two Gaussian blobs in `dim` dimensions projected to 2-D.
pub fn tsne_blobs_result(
    n_per_blob: usize,
    dim: usize,
    separation: f64,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<TsneResult, String> {
    if n_per_blob == 0 || dim == 0 {
        return Err("need at least one point and one dimension".into());
    }
    let (x, labels) = gaussian_blobs(n_per_blob, dim, separation, seed);
    let config = TsneConfig { perplexity, iterations, seed, ..Default::default() };
    let y = tsne(x.view(), &config).map_err(|e| e.to_string())?;
    let names: Vec<&str> = labels.iter().map(|&l| if l == 0 { "blob A" } else { "blob B" }).collect();
    Ok(TsneResult {
        points: y.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        silhouette_input: silhouette(x.view(), &labels).map_err(|e| e.to_string())?,
        silhouette_projection: silhouette(y.view(), &labels).map_err(|e| e.to_string())?,
        svg: render_svg(y.view(), &names, "t-SNE").map_err(|e| e.to_string())?,
        labels,
    })
}

#[wasm_bindgen]
pub fn tsne_blobs(n_per_blob: usize, dim: usize, separation: f64, perplexity: f64, iterations: usize, seed: u64) -> Result<String, JsError> {
    tsne_blobs_result(n_per_blob, dim, separation, perplexity, iterations, seed)
        .map(|r| to_json(&r))
        .map_err(|e| JsError::new(&e))
}

#[derive(Debug, Serialize)]
pub struct ThresholdResult {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub threshold: f64,
    pub j: f64,
    pub j_at_half: f64,
    /// (FPR, TPR) at every candidate, ascending threshold.
    pub roc: Vec<[f64; 2]>,
    pub note: Option<String>,
}

/// Sigmoid scores for `n` examples with label-1 rate `prevalence`; logits are
/// N(±separation/2, 1) shifted by `bias`.
pub fn simulated_scores(n: usize, prevalence: f64, separation: f64, bias: f64, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seed::rng(seed, "demo/scores");
    let noise = Normal::new(0.0, 1.0).expect("valid");
    let p = prevalence.clamp(0.0, 1.0);
    (0..n)
        .map(|_| {
            let y = u8::from(rng.gen_bool(p));
            let mean = if y == 1 { separation / 2.0 } else { -separation / 2.0 };
            let z = mean + bias + noise.sample(&mut rng);
            (1.0 / (1.0 + (-z).exp()), y)
        })
        .unzip()
}

fn rates(scores: &[f64], labels: &[u8], t: f64) -> [f64; 2] {
    let pos = labels.iter().filter(|&&l| l == 1).count().max(1) as f64;
    let neg = labels.iter().filter(|&&l| l == 0).count().max(1) as f64;
    let hit = |want: u8| scores.iter().zip(labels).filter(|(&s, &l)| l == want && s > t).count() as f64;
    [hit(0) / neg, hit(1) / pos]
}

pub fn tune_result(scores: Vec<f64>, labels: Vec<u8>) -> Result<ThresholdResult, String> {
    let tuned = tune(&scores, &labels).map_err(|e| e.to_string())?;
    let roc = candidates(&scores).into_iter().map(|t| rates(&scores, &labels, t)).collect();
    Ok(ThresholdResult {
        threshold: tuned.threshold,
        j: tuned.j,
        j_at_half: youden_j(&scores, &labels, 0.5),
        roc,
        note: tuned.diagnostic,
        scores,
        labels,
    })
}

#[wasm_bindgen]
pub fn tune_simulated(n: usize, prevalence: f64, separation: f64, bias: f64, seed: u64) -> Result<String, JsError> {
    let (scores, labels) = simulated_scores(n, prevalence, separation, bias, seed);
    tune_result(scores, labels).map(|r| to_json(&r)).map_err(|e| JsError::new(&e))
}

#[derive(Debug, Serialize)]
pub struct WeightsResult {
    pub task_types: Vec<&'static str>,
    pub type_weights: Vec<f64>,
    pub tasks: Vec<&'static str>,
    /// Per task: weight of label 0, weight of label 1.
    pub class_weights: Vec<[f64; 2]>,
}

/// `sizes`: TRAIN records per task type (IAC, IBM quality, propaganda).
/// `label0_share`: per task, the proportion of label 0.
pub fn weights_result(sizes: &[usize], label0_share: &[f64]) -> Result<WeightsResult, String> {
    if sizes.len() != NUM_TASK_TYPES {
        return Err(format!("expected {NUM_TASK_TYPES} sizes, got {}", sizes.len()));
    }
    if label0_share.len() != NUM_TASKS {
        return Err(format!("expected {NUM_TASKS} balances, got {}", label0_share.len()));
    }
    let type_weights = compute_type_weights([sizes[0], sizes[1], sizes[2]]).map_err(|e| e.to_string())?;
    let class_weights = Task::ALL
        .iter()
        .zip(label0_share)
        .map(|(task, &p0)| {
            class_weights_from_balance([p0, 1.0 - p0]).map_err(|_| format!("{task} has an empty class"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WeightsResult {
        task_types: TaskType::ALL.iter().map(|t| t.as_str()).collect(),
        type_weights: type_weights.to_vec(),
        tasks: Task::ALL.iter().map(|t| t.display_name()).collect(),
        class_weights,
    })
}

#[wasm_bindgen]
pub fn loss_weights(sizes: Vec<usize>, label0_share: Vec<f64>) -> Result<String, JsError> {
    weights_result(&sizes, &label0_share).map(|r| to_json(&r)).map_err(|e| JsError::new(&e))
}

#[derive(Debug, Serialize)]
pub struct Names {
    pub task_types: Vec<&'static str>,
    pub tasks: Vec<&'static str>,
}

#[wasm_bindgen]
pub fn names() -> String {
    to_json(&Names {
        task_types: TaskType::ALL.iter().map(|t| t.as_str()).collect(),
        tasks: Task::ALL.iter().map(|t| t.display_name()).collect(),
    })
}
