//! Unified masked-label records and the corpus adapters that produce them.
//!
//! Every source corpus is converted into [`Record`]s: one text, the task type
//! of its source, and a partial map from task to binary label. Records travel
//! between stages as JSON Lines (see [`write_jsonl`] / [`read_jsonl`]).

mod adapters;
mod split;
mod stats;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::registry::{Task, TaskType, NUM_TECHNIQUES};

pub use adapters::{
    ingest_iac, ingest_ibm, ingest_propaganda, load_propaganda_dir, Article, IacFormat, IbmFormat,
    Ingested, TechniqueSpan,
};
pub use split::{split, split_key, SplitRatios};
pub use stats::{stats, DatasetStats, TaskStats};
pub use synth::{synthesize, synthesize_with, SynthConfig, TABLE1_POSITIVE_RATE};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("score {score} outside scale [{min}, {max}]")]
    OutOfRange { score: f64, min: f64, max: f64 },
    #[error("invalid scale [{min}, {max}]")]
    InvalidScale { min: f64, max: f64 },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("no records to process")]
    EmptyInput,
    #[error("task {0} has no labels in the TRAIN split")]
    MissingTask(Task),
    #[error("task {task} has no TRAIN examples of class `{class}`")]
    MissingClass { task: Task, class: &'static str },
    #[error("record {record_id}: {reason}")]
    InvalidRecord { record_id: String, reason: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        })
    }
}

/// One text with its task type and a partial label map over the ten tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub record_id: String,
    pub text: String,
    pub task_type: TaskType,
    pub labels: BTreeMap<Task, u8>,
    #[serde(default)]
    pub raw_technique_labels: Option<[u8; NUM_TECHNIQUES]>,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub augmented_from: Option<String>,
}

impl Record {
    pub fn label(&self, task: Task) -> Option<u8> {
        self.labels.get(&task).copied()
    }

    /// Checks the record invariants: non-empty text, at least one label, labels
    /// only for tasks of the record's type, binary values, and technique labels
    /// present exactly for propaganda records with a max matching the task label.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| {
            Err(CorpusError::InvalidRecord { record_id: self.record_id.clone(), reason })
        };
        if self.record_id.is_empty() {
            return fail("empty record_id".into());
        }
        if self.text.trim().is_empty() {
            return fail("empty text".into());
        }
        if self.labels.is_empty() {
            return fail("no labels".into());
        }
        for (task, &value) in &self.labels {
            if task.task_type() != self.task_type {
                return fail(format!("label for {task} on a {} record", self.task_type));
            }
            if value > 1 {
                return fail(format!("non-binary label {value} for {task}"));
            }
        }
        match (&self.raw_technique_labels, self.task_type) {
            (Some(raw), TaskType::Propaganda) => {
                if raw.iter().any(|&v| v > 1) {
                    return fail("non-binary technique label".into());
                }
                let pooled = raw.iter().copied().max().unwrap_or(0);
                if self.label(Task::Propaganda) != Some(pooled) {
                    return fail("propaganda label differs from the max of its techniques".into());
                }
            }
            (None, TaskType::Propaganda) => return fail("missing raw_technique_labels".into()),
            (Some(_), _) => return fail("raw_technique_labels on a non-propaganda record".into()),
            (None, _) => {}
        }
        Ok(())
    }
}

/// How a score exactly at the scale midpoint is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Upper,
    Lower,
}

/// Binary label from a continuous score by cutting at the scale midpoint;
/// the midpoint itself maps to 1.
pub fn dichotomize(score: f64, scale_min: f64, scale_max: f64) -> Result<u8, CorpusError> {
    dichotomize_with(score, scale_min, scale_max, TieRule::Upper)
}

pub fn dichotomize_with(
    score: f64,
    scale_min: f64,
    scale_max: f64,
    tie: TieRule,
) -> Result<u8, CorpusError> {
    if !(scale_min < scale_max) || !scale_min.is_finite() || !scale_max.is_finite() {
        return Err(CorpusError::InvalidScale { min: scale_min, max: scale_max });
    }
    if !(scale_min..=scale_max).contains(&score) {
        return Err(CorpusError::OutOfRange { score, min: scale_min, max: scale_max });
    }
    let mid = scale_min + (scale_max - scale_min) / 2.0;
    Ok(if score > mid {
        1
    } else if score < mid {
        0
    } else {
        match tie {
            TieRule::Upper => 1,
            TieRule::Lower => 0,
        }
    })
}

/// A per-row problem encountered while ingesting; ingestion carries on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Writes records as JSON Lines, one record per line.
pub fn write_jsonl<W: Write>(records: &[Record], mut out: W) -> Result<(), CorpusError> {
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|source| CorpusError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates JSON Lines records. Blank lines are ignored.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Record>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Records of the given split.
pub fn in_split(records: &[Record], split: Split) -> Vec<&Record> {
    records.iter().filter(|r| r.split == Some(split)).collect()
}
