//! Synthetic corpus generator for tests and desk-scale runs.
//!
//! Each record is a bag of filler pseudo-words plus class-indicative cue
//! tokens. In the default mode every labeled task gets its own cue token
//! (`<task_slug>_c<label>`), present with probability `separability`. In the
//! shared-cue mode a record's labels all follow one latent stance, and the cue
//! is drawn from a pool of tokens shared by every task (`shared_c<label>_<k>`),
//! so evidence learned from one task transfers to the others.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Record;
use crate::registry::{Task, TaskType, NUM_TECHNIQUES};
use crate::seed;

/// Label-1 rate per task (task order) taken from the reference corpora's
/// training balances.
pub const TABLE1_POSITIVE_RATE: [f64; 10] = [0.37, 0.79, 0.59, 0.34, 0.27, 0.75, 0.62, 0.56, 0.34, 0.94];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_type: usize,
    pub separability: f64,
    pub seed: u64,
    /// Label-1 rates are clamped into `[min_rate, 1 - min_rate]`.
    pub min_rate: f64,
    /// Probability that a forum post is scored on each forum task.
    pub iac_label_rate: f64,
    /// Size of the shared cue pool per class; `None` for task-specific cues.
    pub shared_cue_pool: Option<usize>,
    pub filler_len: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_type: 200,
            separability: 1.0,
            seed: 0,
            min_rate: 0.2,
            iac_label_rate: 0.5,
            shared_cue_pool: None,
            filler_len: (6, 14),
        }
    }
}

const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "ta", "vo", "shi", "de", "pa", "gu", "ze"];

fn filler_word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[i % n], SYLLABLES[(i / n) % n], SYLLABLES[(i * 7 + 3) % n])
}

/// Cue token for a task-specific class.
pub fn cue_token(task: Task, label: u8) -> String {
    format!("{}_c{label}", task.slug())
}

fn technique_cue(technique: usize) -> String {
    format!("technique_{technique}")
}

/// `n_per_type` records of each task type with the default settings.
pub fn synthesize(n_per_type: usize, separability: f64, seed: u64) -> Vec<Record> {
    synthesize_with(&SynthConfig { n_per_type, separability, seed, ..SynthConfig::default() })
}

pub fn synthesize_with(config: &SynthConfig) -> Vec<Record> {
    let separability = config.separability.clamp(0.0, 1.0);
    let filler: Vec<String> = (0..144).map(filler_word).collect();
    let rate = |task: Task| {
        if config.shared_cue_pool.is_some() {
            0.5
        } else {
            TABLE1_POSITIVE_RATE[task.index()].clamp(config.min_rate, 1.0 - config.min_rate)
        }
    };

    let mut records = Vec::with_capacity(config.n_per_type * 3);
    for ty in TaskType::ALL {
        for i in 0..config.n_per_type {
            let record_id = format!("syn-{}-{i:05}", ty.as_str().to_lowercase());
            let mut rng = seed::rng(config.seed, &format!("synth/{record_id}"));

            let tasks: Vec<Task> = match ty {
                TaskType::Iac => {
                    let mut chosen: Vec<Task> = Task::IAC
                        .into_iter()
                        .filter(|_| rng.gen_bool(config.iac_label_rate.clamp(0.0, 1.0)))
                        .collect();
                    if chosen.is_empty() {
                        chosen.push(*Task::IAC.choose(&mut rng).expect("non-empty"));
                    }
                    chosen
                }
                _ => ty.tasks().collect(),
            };

            let stance = u8::from(rng.gen_bool(0.5));
            let mut labels = BTreeMap::new();
            for &task in &tasks {
                let label = if config.shared_cue_pool.is_some() {
                    stance
                } else {
                    u8::from(rng.gen_bool(rate(task)))
                };
                labels.insert(task, label);
            }

            let mut cues = Vec::new();
            match config.shared_cue_pool {
                Some(pool) => {
                    if rng.gen_bool(separability) {
                        let k = rng.gen_range(0..pool.max(1));
                        cues.push(format!("shared_c{stance}_{k}"));
                    }
                }
                None => {
                    for (&task, &label) in &labels {
                        if rng.gen_bool(separability) {
                            cues.push(cue_token(task, label));
                        }
                    }
                }
            }

            let raw_technique_labels = (ty == TaskType::Propaganda).then(|| {
                let mut raw = [0u8; NUM_TECHNIQUES];
                if labels[&Task::Propaganda] == 1 {
                    let n = rng.gen_range(1..=2);
                    for t in rand::seq::index::sample(&mut rng, NUM_TECHNIQUES, n) {
                        raw[t] = 1;
                        if rng.gen_bool(separability) {
                            cues.push(technique_cue(t));
                        }
                    }
                }
                raw
            });

            let len = rng.gen_range(config.filler_len.0..=config.filler_len.1.max(config.filler_len.0));
            let mut words: Vec<String> =
                (0..len).map(|_| filler.choose(&mut rng).expect("non-empty").clone()).collect();
            for cue in cues {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, cue);
            }
            let text = format!("{}.", words.join(" "));

            records.push(Record {
                record_id,
                text,
                task_type: ty,
                labels,
                raw_technique_labels,
                split: None,
                augmented_from: None,
            });
        }
    }
    records
}
