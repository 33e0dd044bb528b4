//! One-epoch training cost over nested subsamples of TRAIN.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DiagnosticsError;
use crate::corpus::{Record, Split};
use crate::encoder::EncoderConfig;
use crate::head::HeadConfig;
use crate::loss::LossWeights;
use crate::registry::Task;
use crate::train::{build_model, run_epoch, EpochFailure, EpochState, Scope, TrainConfig};
use crate::{memory, seed};

pub const PROFILE_FRACTIONS: [f64; 4] = [0.05, 0.10, 0.20, 0.40];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MultiTask,
    /// Ten independent models, one per task, each trained on its own loss.
    SingleTask,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MultiTask => "multi_task",
            Variant::SingleTask => "single_task",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub fractions: Vec<f64>,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    /// Run one untimed epoch first so allocator and cache warm-up is not
    /// charged to the first measurement.
    pub warm_up: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            fractions: PROFILE_FRACTIONS.to_vec(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            warm_up: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub model_variant: String,
    pub data_fraction: f64,
    pub records: usize,
    pub wall_seconds: f64,
    pub peak_memory_bytes: u64,
    pub error: Option<String>,
}

/// Wall time and peak memory of one epoch.
fn time_epoch(records: &[&Record], scope: Scope, weights: &LossWeights, config: &ProfileConfig) -> Result<(f64, u64), String> {
    let mut model = build_model(&config.encoder, &config.head, config.train.seed).map_err(|e| e.to_string())?;
    model.head.config.dropout_rate = config.train.dropout_rate;
    model.train_encoder = !config.train.freeze_encoder;
    let steps = records.len().div_ceil(config.train.batch_size);
    let mut state = EpochState::new(&config.train, steps);
    memory::reset_peak();
    let start = Instant::now();
    run_epoch(&mut model, records, weights, &config.train, scope, &mut state).map_err(|e| match e {
        EpochFailure::Model(e) => e.to_string(),
        EpochFailure::Diverged(_) => "loss became non-finite".to_string(),
    })?;
    Ok((start.elapsed().as_secs_f64(), memory::peak_bytes()))
}

fn measure(variant: Variant, subset: &[&Record], weights: &LossWeights, config: &ProfileConfig) -> Result<(f64, u64), String> {
    match variant {
        Variant::MultiTask => time_epoch(subset, Scope::MultiTask, weights, config),
        Variant::SingleTask => {
            let (mut seconds, mut peak) = (0.0, 0);
            let unit = LossWeights { type_weights: [1.0; 3], ..weights.clone() };
            for task in Task::ALL {
                let scope = Scope::SingleTask(task);
                let own: Vec<&Record> = subset.iter().copied().filter(|r| scope.admits(r)).collect();
                if own.is_empty() {
                    return Err(format!("no {task} records in the subsample"));
                }
                let (s, p) = time_epoch(&own, scope, &unit, config)?;
                seconds += s;
                peak = peak.max(p);
            }
            Ok((seconds, peak))
        }
    }
}

/// Trains each variant for one epoch on each fraction of the TRAIN records.
/// Subsamples are nested: a larger fraction contains every smaller one.
/// A failing variant is recorded in its row and profiling continues.
pub fn profile(
    variants: &[Variant],
    records: &[Record],
    weights: &LossWeights,
    config: &ProfileConfig,
) -> Result<Vec<ProfileRow>, DiagnosticsError> {
    if let Some(&f) = config.fractions.iter().find(|f| !PROFILE_FRACTIONS.contains(f)) {
        return Err(DiagnosticsError::Fraction(f));
    }
    let mut train: Vec<&Record> = records.iter().filter(|r| r.split == Some(Split::Train)).collect();
    if train.is_empty() {
        return Err(DiagnosticsError::NoRecords);
    }
    train.shuffle(&mut seed::rng(config.train.seed, "profile/subsample"));
    let take = |f: f64| ((f * train.len() as f64).ceil() as usize).clamp(1, train.len());

    if config.warm_up {
        let smallest = config.fractions.iter().copied().fold(f64::INFINITY, f64::min);
        if smallest.is_finite() {
            let _ = time_epoch(&train[..take(smallest)], Scope::MultiTask, weights, config);
        }
    }

    let mut rows = Vec::with_capacity(variants.len() * config.fractions.len());
    for &variant in variants {
        for &fraction in &config.fractions {
            let subset = &train[..take(fraction)];
            let (wall_seconds, peak_memory_bytes, error) = match measure(variant, subset, weights, config) {
                Ok((s, p)) => (s, p, None),
                Err(e) => (0.0, 0, Some(e)),
            };
            rows.push(ProfileRow {
                model_variant: variant.as_str().to_string(),
                data_fraction: fraction,
                records: subset.len(),
                wall_seconds,
                peak_memory_bytes,
                error,
            });
        }
    }
    Ok(rows)
}

pub fn write_profile<W: Write>(rows: &[ProfileRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "model_variant\tdata_fraction\trecords\twall_seconds\tpeak_memory_bytes\terror")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{:.2}\t{}\t{:.6}\t{}\t{}",
            r.model_variant,
            r.data_fraction,
            r.records,
            r.wall_seconds,
            r.peak_memory_bytes,
            r.error.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split, stats, synthesize, SplitRatios};

    #[test]
    fn one_row_per_variant_and_fraction() {
        let recs = split(synthesize(200, 1.0, 1), SplitRatios::default(), 1).unwrap();
        let weights = LossWeights::from_stats(&stats(&recs).unwrap()).unwrap();
        let config = ProfileConfig {
            encoder: EncoderConfig { vocabulary_hash_buckets: 256, embedding_dim: 16, ..Default::default() },
            head: HeadConfig { input_dim: 16, hidden_width: 8, ..Default::default() },
            train: TrainConfig { batch_size: 32, ..Default::default() },
            ..Default::default()
        };
        let rows = profile(&[Variant::MultiTask, Variant::SingleTask], &recs, &weights, &config).unwrap();
        assert_eq!(rows.len(), 8);
        for r in &rows {
            assert!(r.wall_seconds > 0.0 || r.error.is_some(), "{r:?}");
        }
        assert_eq!(rows[0].records, 24);
        assert_eq!(rows[3].records, 192);
        let mut buf = Vec::new();
        write_profile(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
    }

    #[test]
    fn rejects_unknown_fractions() {
        let recs = split(synthesize(20, 1.0, 1), SplitRatios::default(), 1).unwrap();
        let config = ProfileConfig { fractions: vec![0.3], ..Default::default() };
        assert!(matches!(
            profile(&[Variant::MultiTask], &recs, &LossWeights::uniform(), &config),
            Err(DiagnosticsError::Fraction(_))
        ));
    }
}
