//! Optimization: AdamW with decoupled weight decay, linear warmup, early
//! stopping on validation loss, and grid search.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Record, Split};
use crate::encoder::{load_encoder, EncoderConfig};
use crate::eval::evaluate_probabilities;
use crate::head::{Head, HeadConfig};
use crate::loss::{masked_bce, LossBatch, LossWeights};
use crate::model::{Model, ModelError, Snapshot};
use crate::nn::Mode;
use crate::registry::{Task, NUM_TASK_TYPES};
use crate::thresholds::ThresholdSet;
use crate::{memory, seed};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no {0:?} records to train on")]
    NoData(Split),
    #[error("loss became non-finite at epoch {epoch}, step {step}; parameters from the last finite step are attached")]
    Diverged { epoch: usize, step: usize, last_finite: Box<Snapshot>, history: Box<TrainHistory> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("every grid point failed")]
    GridFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Applied to the head's hidden layers; overrides the head config.
    pub dropout_rate: f64,
    /// Fraction of all optimizer steps (`max_epochs` × batches per epoch).
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub freeze_encoder: bool,
    /// Batch size for validation forward passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 0.01,
            dropout_rate: 0.40,
            warmup_fraction: 0.05,
            batch_size: 256,
            early_stop_patience: 2,
            max_epochs: 50,
            seed: 0,
            freeze_encoder: false,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }
}

/// Learning rate at `step`: linear ramp from 0 over the warmup steps, then
/// constant.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let warmup = (config.warmup_fraction * total_steps as f64).floor() as usize;
    if step < warmup {
        config.learning_rate * step as f64 / warmup as f64
    } else {
        config.learning_rate
    }
}

/// AdamW: `p ← p·(1 − lr·λ) − lr·m̂/(√v̂ + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { weight_decay, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPSILON);
                p[i] = p[i] * decay - lr * update;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    /// 1-based epoch of the best loss.
    pub best_epoch: usize,
    bad_epochs: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best_loss: f64::INFINITY, best_epoch: 0, bad_epochs: 0, epochs: 0 }
    }

    pub fn update(&mut self, loss: f64) -> StopDecision {
        self.epochs += 1;
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = self.epochs;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the batch losses, weighted by batch size.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Class-weighted F1 at threshold 0.5, percent.
    pub val_f1: BTreeMap<Task, f64>,
    pub mean_val_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: usize,
    pub wall_seconds: f64,
    pub peak_memory_bytes: u64,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

/// Which loss terms are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    MultiTask,
    /// Only this task's loss term, on the records labeled for it, with unit
    /// task-type weights.
    SingleTask(Task),
}

impl Scope {
    pub fn admits(self, r: &Record) -> bool {
        match self {
            Scope::MultiTask => true,
            Scope::SingleTask(t) => r.label(t).is_some(),
        }
    }

    fn batch(self, records: &[&Record]) -> LossBatch {
        match self {
            Scope::MultiTask => LossBatch::from_records(records),
            Scope::SingleTask(t) => LossBatch::for_task(records, t),
        }
    }

    fn weights(self, w: &LossWeights) -> LossWeights {
        match self {
            Scope::MultiTask => w.clone(),
            Scope::SingleTask(_) => LossWeights { type_weights: [1.0; NUM_TASK_TYPES], ..w.clone() },
        }
    }
}

/// EVAL-mode loss and threshold-0.5 metrics on `records`.
pub fn validate(
    model: &Model,
    records: &[&Record],
    weights: &LossWeights,
    scope: Scope,
    chunk: usize,
) -> Result<(f64, BTreeMap<Task, f64>), ModelError> {
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let probs = model.predict_chunked(&texts, chunk)?;
    let batch = scope.batch(records);
    let loss = masked_bce(probs.view(), &batch, &scope.weights(weights))?;
    let f1 = match evaluate_probabilities(probs.view(), &batch, &ThresholdSet::default()) {
        Ok(report) => report.tasks.into_iter().map(|(t, m)| (t, m.f1)).collect(),
        Err(_) => BTreeMap::new(),
    };
    Ok((loss, f1))
}

pub fn train(
    model: &mut Model,
    train_records: &[Record],
    val_records: &[Record],
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    train_scoped(model, train_records, val_records, weights, config, Scope::MultiTask, &mut |_| {})
}

/// Trains `model` in place and leaves it at the best validation-loss epoch.
pub fn train_scoped(
    model: &mut Model,
    train_records: &[Record],
    val_records: &[Record],
    weights: &LossWeights,
    config: &TrainConfig,
    scope: Scope,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainHistory, TrainError> {
    config.validate()?;
    let train_set: Vec<&Record> = train_records.iter().filter(|r| scope.admits(r)).collect();
    let val_set: Vec<&Record> = val_records.iter().filter(|r| scope.admits(r)).collect();
    if train_set.is_empty() {
        return Err(TrainError::NoData(Split::Train));
    }
    if val_set.is_empty() {
        return Err(TrainError::NoData(Split::Val));
    }
    let weights = scope.weights(weights);
    model.head.config.dropout_rate = config.dropout_rate;
    model.train_encoder = !config.freeze_encoder;

    memory::reset_peak();
    let started = Instant::now();
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let mut state = EpochState::new(config, steps_per_epoch * config.max_epochs);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut history = TrainHistory::default();
    let mut best = model.snapshot();

    for epoch in 1..=config.max_epochs {
        let epoch_start = Instant::now();
        let train_loss = match run_epoch(model, &train_set, &weights, config, scope, &mut state) {
            Ok(loss) => loss,
            Err(EpochFailure::Model(e)) => return Err(e.into()),
            Err(EpochFailure::Diverged(last_finite)) => {
                history.steps = state.step;
                return Err(TrainError::Diverged { epoch, step: state.step, last_finite, history: Box::new(history) });
            }
        };
        let (val_loss, val_f1) = validate(model, &val_set, &weights, scope, config.eval_batch_size)?;
        let mean_val_f1 = if val_f1.is_empty() { 0.0 } else { val_f1.values().sum::<f64>() / val_f1.len() as f64 };
        let log = EpochLog { epoch, train_loss, val_loss, val_f1, mean_val_f1, seconds: epoch_start.elapsed().as_secs_f64() };
        on_epoch(&log);
        history.epochs.push(log);
        match stopper.update(val_loss) {
            StopDecision::Improved => best = model.snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.restore(&best);
    history.best_epoch = stopper.best_epoch;
    history.steps = state.step;
    history.wall_seconds = started.elapsed().as_secs_f64();
    history.peak_memory_bytes = memory::peak_bytes();
    Ok(history)
}

/// Optimizer, random streams and step counter carried across epochs.
pub struct EpochState {
    opt: AdamW,
    order_rng: rand_chacha::ChaCha8Rng,
    dropout_rng: rand_chacha::ChaCha8Rng,
    pub step: usize,
    pub total_steps: usize,
}

impl EpochState {
    pub fn new(config: &TrainConfig, total_steps: usize) -> Self {
        EpochState {
            opt: AdamW::new(config.weight_decay),
            order_rng: seed::rng(config.seed, "batch_order"),
            dropout_rng: seed::rng(config.seed, "dropout"),
            step: 0,
            total_steps,
        }
    }
}

#[derive(Debug)]
pub enum EpochFailure {
    Model(ModelError),
    /// Non-finite loss or gradient; carries the parameters before the bad step.
    Diverged(Box<Snapshot>),
}

/// One pass over `records` in a freshly shuffled order, last short batch
/// included. Returns the mean training loss.
pub fn run_epoch(
    model: &mut Model,
    records: &[&Record],
    weights: &LossWeights,
    config: &TrainConfig,
    scope: Scope,
    state: &mut EpochState,
) -> Result<f64, EpochFailure> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut state.order_rng);
    let mut loss_sum = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let recs: Vec<&Record> = chunk.iter().map(|&i| records[i]).collect();
        let texts: Vec<&str> = recs.iter().map(|r| r.text.as_str()).collect();
        let batch = scope.batch(&recs);
        let (loss, grads) = model
            .loss_and_grads(&texts, &batch, weights, Mode::Train, &mut state.dropout_rng)
            .map_err(EpochFailure::Model)?;
        // Parameters are still finite here, so they are the last finite state.
        if !loss.is_finite() || grads.tensors().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(EpochFailure::Diverged(Box::new(model.snapshot())));
        }
        let lr = lr_schedule(state.step, state.total_steps, config);
        state.opt.step(model.parameters_mut(), &grads.tensors(), lr);
        loss_sum += loss * recs.len() as f64;
        state.step += 1;
    }
    Ok(loss_sum / records.len().max(1) as f64)
}

/// A fresh model: encoder from `encoder`, head initialized from the
/// `init/head` substream of `seed`.
pub fn build_model(encoder: &EncoderConfig, head: &HeadConfig, seed: u64) -> Result<Model, ModelError> {
    let enc = load_encoder(encoder)?;
    let config = HeadConfig { input_dim: enc.embedding_dim(), ..head.clone() };
    let head = Head::init(config, &mut seed::rng(seed, "init/head"))?;
    Model::new(enc, head)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub hidden_width: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub warmup_fraction: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            learning_rate: vec![1e-4, 3e-4, 1e-3],
            dropout_rate: vec![0.2, 0.4],
            hidden_width: vec![16, 22, 32],
            batch_size: vec![128, 256],
            warmup_fraction: vec![0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub hidden_width: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
}

impl GridPoint {
    pub fn apply(&self, train: &TrainConfig, head: &HeadConfig) -> (TrainConfig, HeadConfig) {
        (
            TrainConfig {
                learning_rate: self.learning_rate,
                dropout_rate: self.dropout_rate,
                batch_size: self.batch_size,
                warmup_fraction: self.warmup_fraction,
                ..train.clone()
            },
            HeadConfig { hidden_width: self.hidden_width, dropout_rate: self.dropout_rate, ..head.clone() },
        )
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate.is_empty()
            || self.dropout_rate.is_empty()
            || self.hidden_width.is_empty()
            || self.batch_size.is_empty()
            || self.warmup_fraction.is_empty()
        {
            return Err(TrainError::Config("every grid axis needs at least one value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rate.len()
            * self.dropout_rate.len()
            * self.hidden_width.len()
            * self.batch_size.len()
            * self.warmup_fraction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination; the first axis (`learning_rate`) varies slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rate {
            for &dropout_rate in &self.dropout_rate {
                for &hidden_width in &self.hidden_width {
                    for &batch_size in &self.batch_size {
                        for &warmup_fraction in &self.warmup_fraction {
                            out.push(GridPoint { learning_rate, dropout_rate, hidden_width, batch_size, warmup_fraction });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub index: usize,
    pub point: GridPoint,
    /// Mean validation F1 across tasks at the restored epoch.
    pub mean_val_f1: Option<f64>,
    pub val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub runs: Vec<GridRun>,
    pub best: usize,
}

impl GridReport {
    pub fn best_run(&self) -> &GridRun {
        &self.runs[self.best]
    }
}

/// Highest mean F1, then lowest validation loss, then earliest index.
pub fn select_best(runs: &[GridRun]) -> Option<usize> {
    runs.iter()
        .filter_map(|r| Some((r.index, r.mean_val_f1?, r.val_loss?)))
        .min_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
        .map(|(i, _, _)| i)
}

/// Trains one fresh model per grid point. A failing point is recorded and
/// the search continues.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    spec: &GridSpec,
    base_train: &TrainConfig,
    base_head: &HeadConfig,
    encoder: &EncoderConfig,
    train_records: &[Record],
    val_records: &[Record],
    weights: &LossWeights,
    on_run: &mut dyn FnMut(&GridRun),
) -> Result<GridReport, TrainError> {
    spec.validate()?;
    let mut runs = Vec::with_capacity(spec.len());
    for (index, point) in spec.points().into_iter().enumerate() {
        let (tc, hc) = point.apply(base_train, base_head);
        let outcome = build_model(encoder, &hc, tc.seed)
            .map_err(TrainError::from)
            .and_then(|mut m| train(&mut m, train_records, val_records, weights, &tc));
        let run = match outcome {
            Ok(h) => {
                let best = h.best().expect("at least one epoch");
                GridRun {
                    index,
                    point,
                    mean_val_f1: Some(best.mean_val_f1),
                    val_loss: Some(best.val_loss),
                    best_epoch: Some(h.best_epoch),
                    error: None,
                }
            }
            Err(e) => GridRun { index, point, mean_val_f1: None, val_loss: None, best_epoch: None, error: Some(e.to_string()) },
        };
        on_run(&run);
        runs.push(run);
    }
    let best = select_best(&runs).ok_or(TrainError::GridFailed)?;
    Ok(GridReport { runs, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, 1000, &c), 0.0);
        assert!((lr_schedule(25, 1000, &c) - 1.5e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(50, 1000, &c), 3e-4);
        assert_eq!(lr_schedule(999, 1000, &c), 3e-4);
        let none = TrainConfig { warmup_fraction: 0.0, ..c };
        assert_eq!(lr_schedule(0, 1000, &none), 3e-4);
    }

    #[test]
    fn early_stopping_example() {
        let mut s = EarlyStopping::new(2);
        let decisions: Vec<StopDecision> = [1.0, 0.9, 0.95, 0.97].iter().map(|&l| s.update(l)).collect();
        assert_eq!(
            decisions,
            [StopDecision::Improved, StopDecision::Improved, StopDecision::Continue, StopDecision::Stop]
        );
        assert_eq!(s.best_epoch, 2);
        // Equal loss is not an improvement.
        let mut s = EarlyStopping::new(1);
        s.update(1.0);
        assert_eq!(s.update(1.0), StopDecision::Stop);
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        let mut opt = AdamW::new(0.01);
        opt.step(vec![p.as_mut_slice()], &[g.as_slice()], 0.1);
        let f = 1.0 - 0.1 * 0.01;
        assert_eq!(p, vec![f, -2.0 * f, 0.5 * f]);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let orig = vec![0.3, -0.7];
        let mut p = orig.clone();
        let mut opt = AdamW::new(0.01);
        opt.step(vec![p.as_mut_slice()], &[[5.0, -1.0].as_slice()], 0.0);
        assert_eq!(p, orig);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction the first step is lr · g/|g| (up to ε).
        let mut p = vec![0.0, 0.0];
        let mut opt = AdamW::new(0.0);
        opt.step(vec![p.as_mut_slice()], &[[2.0, -0.5].as_slice()], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn default_grid_has_72_points() {
        let g = GridSpec::default();
        assert_eq!(g.len(), 72);
        assert_eq!(g.points().len(), 72);
        assert_eq!(g.points()[0].learning_rate, 1e-4);
        assert_eq!(g.points()[71].warmup_fraction, 0.1);
    }

    #[test]
    fn selection_tie_rules() {
        let p = GridSpec::default().points()[0];
        let run = |index, f1, loss| GridRun {
            index,
            point: p,
            mean_val_f1: Some(f1),
            val_loss: Some(loss),
            best_epoch: Some(1),
            error: None,
        };
        assert_eq!(select_best(&[run(0, 80.0, 0.5), run(1, 80.0, 0.4), run(2, 79.0, 0.1)]), Some(1));
        assert_eq!(select_best(&[run(0, 80.0, 0.4), run(1, 80.0, 0.4)]), Some(0));
        let failed = GridRun { mean_val_f1: None, val_loss: None, error: Some("x".into()), ..run(0, 0.0, 0.0) };
        assert_eq!(select_best(&[failed.clone(), run(1, 10.0, 1.0)]), Some(1));
        assert_eq!(select_best(&[failed]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { early_stop_patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { warmup_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
        let empty = GridSpec { batch_size: vec![], ..Default::default() };
        assert!(empty.validate().is_err());
    }
}
