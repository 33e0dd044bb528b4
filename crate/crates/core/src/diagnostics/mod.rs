//! Representation dumps, t-SNE projections, plots and training profiles.

mod plot;
mod profile;
mod tsne;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use plot::{emit_plot, render_svg, PALETTE};
pub use profile::{profile, write_profile, ProfileConfig, ProfileRow, Variant, PROFILE_FRACTIONS};
pub use tsne::{gaussian_blobs, joint_probabilities, silhouette, tsne, TsneConfig};

use crate::corpus::Record;
use crate::model::{Model, ModelError};
use crate::registry::Task;
use crate::seed;

pub const DEFAULT_MAX_POINTS: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("unknown layer {0:?}; expected encoder_out, shared or task_specific")]
    UnknownLayer(String),
    #[error("no records to sample")]
    NoRecords,
    #[error("t-SNE needs more than 3 x perplexity points ({n} points, perplexity {perplexity})")]
    TooFewPoints { n: usize, perplexity: f64 },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("{points} points but {tags} tags")]
    Misaligned { points: usize, tags: usize },
    #[error("nothing to plot")]
    Empty,
    #[error("expected 2 columns, got {0}")]
    Dimensions(usize),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("data fraction {0} is not one of 0.05, 0.10, 0.20, 0.40")]
    Fraction(f64),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    EncoderOut,
    Shared,
    TaskSpecific,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::EncoderOut, Layer::Shared, Layer::TaskSpecific];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::EncoderOut => "encoder_out",
            Layer::Shared => "shared",
            Layer::TaskSpecific => "task_specific",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = DiagnosticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Layer::ALL.into_iter().find(|l| l.as_str() == key).ok_or_else(|| DiagnosticsError::UnknownLayer(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationDump {
    pub layer: Layer,
    /// n × d.
    pub matrix: Array2<f64>,
    pub task_tags: Vec<Task>,
    pub record_ids: Vec<String>,
    pub sample_seed: u64,
}

impl RepresentationDump {
    /// Tab-separated: a `#` header line, then `record_id task v1 .. vd`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (n, d) = self.matrix.dim();
        writeln!(out, "# layer={} sample_seed={} rows={n} cols={d}", self.layer, self.sample_seed)?;
        for ((row, tag), id) in self.matrix.rows().into_iter().zip(&self.task_tags).zip(&self.record_ids) {
            write!(out, "{id}\t{}", tag.slug())?;
            for v in row {
                write!(out, "\t{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Picks `min(max_points, n)` records, round-robin over tasks so every task
/// is represented. Each pick is tagged with the task that drew it.
pub fn sample_stratified(records: &[Record], max_points: usize, seed: u64) -> Vec<(usize, Task)> {
    let mut pools: Vec<(Task, Vec<usize>)> = Task::ALL
        .iter()
        .map(|&task| {
            let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label(task).is_some()).collect();
            idx.shuffle(&mut seed::rng(seed, &format!("diagnostics/sample/{}", task.slug())));
            idx.reverse();
            (task, idx)
        })
        .collect();
    let target = max_points.min(records.iter().filter(|r| !r.labels.is_empty()).count());
    let mut taken = vec![false; records.len()];
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let before = out.len();
        for (task, pool) in pools.iter_mut() {
            while let Some(i) = pool.pop() {
                if !taken[i] {
                    taken[i] = true;
                    out.push((i, *task));
                    break;
                }
            }
            if out.len() == target {
                break;
            }
        }
        if out.len() == before {
            break;
        }
    }
    out
}

const CHUNK: usize = 256;

/// EVAL-mode activations at `layer` for a stratified sample of `records`.
/// `TaskSpecific` yields one row per (sampled record, labeled task) pair,
/// read from that task's last hidden layer.
pub fn extract(model: &Model, records: &[Record], layer: Layer, max_points: usize, seed: u64) -> Result<RepresentationDump, DiagnosticsError> {
    let picks = sample_stratified(records, max_points, seed);
    if picks.is_empty() {
        return Err(DiagnosticsError::NoRecords);
    }
    let mut parts: Vec<Array2<f64>> = Vec::new();
    let mut task_tags = Vec::new();
    let mut record_ids = Vec::new();
    for chunk in picks.chunks(CHUNK) {
        let texts: Vec<&str> = chunk.iter().map(|&(i, _)| records[i].text.as_str()).collect();
        let trace = model.trace(&texts)?;
        match layer {
            Layer::EncoderOut | Layer::Shared => {
                parts.push(if layer == Layer::EncoderOut { trace.encoder_out } else { trace.shared_repr });
                for &(i, task) in chunk {
                    task_tags.push(task);
                    record_ids.push(records[i].record_id.clone());
                }
            }
            Layer::TaskSpecific => {
                let mut rows = Vec::new();
                for (j, &(i, _)) in chunk.iter().enumerate() {
                    for &task in records[i].labels.keys() {
                        rows.push(trace.task_repr[task.index()].row(j).to_owned());
                        task_tags.push(task);
                        record_ids.push(records[i].record_id.clone());
                    }
                }
                let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
                parts.push(concatenate(Axis(0), &views).expect("equal widths"));
            }
        }
    }
    let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
    Ok(RepresentationDump {
        layer,
        matrix: concatenate(Axis(0), &views).expect("equal widths"),
        task_tags,
        record_ids,
        sample_seed: seed,
    })
}
