//! Class-weighted metrics, baselines and comparison against reference
//! results.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetStats, Record};
use crate::loss::LossBatch;
use crate::registry::Task;
use crate::thresholds::{apply, ThresholdError, ThresholdSet};
use crate::{seed, text};

/// Reference results bundled with the crate.
pub const REFERENCE_TABLE: &str = include_str!("../data/reference_sota.tsv");

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no predictions to score")]
    Empty,
    #[error("{predictions} predictions but {labels} labels")]
    Length { predictions: usize, labels: usize },
    #[error("value {0} is not a binary label")]
    NotBinary(u8),
    #[error("training data for {0} has an empty vocabulary")]
    EmptyVocabulary(Task),
    #[error("no training records labeled for {0}")]
    NoTraining(Task),
    #[error("no evaluation records")]
    NoTest,
    #[error("unknown metric {0:?}")]
    Metric(String),
    #[error("report has no result for {0}")]
    MissingTask(Task),
    #[error("reference table line {line}: {reason}")]
    Reference { line: usize, reason: String },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

/// Class-weighted scores, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub support: usize,
}

/// One-vs-rest precision, recall and F1 per class, averaged with weights
/// equal to each class's true support. Degenerate ratios count as 0.
pub fn weighted_metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Length { predictions: predictions.len(), labels: labels.len() });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&v) = predictions.iter().chain(labels).find(|&&v| v > 1) {
        return Err(EvalError::NotBinary(v));
    }
    let n = labels.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut m = Metrics { support: n, ..Default::default() };
    let mut correct = 0;
    for c in 0..=1u8 {
        let tp = predictions.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count();
        let predicted = predictions.iter().filter(|&&p| p == c).count();
        let actual = labels.iter().filter(|&&l| l == c).count();
        correct += tp;
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let w = actual as f64 / n as f64;
        m.precision += w * p;
        m.recall += w * r;
        m.f1 += w * f1;
    }
    m.precision *= 100.0;
    m.recall *= 100.0;
    m.f1 *= 100.0;
    m.accuracy = 100.0 * correct as f64 / n as f64;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: BTreeMap<Task, Metrics>,
    /// Unweighted mean over the tasks present.
    pub mean: Metrics,
}

impl MetricsReport {
    pub fn from_tasks(tasks: BTreeMap<Task, Metrics>) -> Self {
        let k = tasks.len().max(1) as f64;
        let mean = Metrics {
            precision: tasks.values().map(|m| m.precision).sum::<f64>() / k,
            recall: tasks.values().map(|m| m.recall).sum::<f64>() / k,
            f1: tasks.values().map(|m| m.f1).sum::<f64>() / k,
            accuracy: tasks.values().map(|m| m.accuracy).sum::<f64>() / k,
            support: tasks.values().map(|m| m.support).sum(),
        };
        MetricsReport { tasks, mean }
    }

    pub fn f1(&self, task: Task) -> Option<f64> {
        self.tasks.get(&task).map(|m| m.f1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>9} {:>9} {:>9} {:>9} {:>8}", "Task", "Precision", "Recall", "F1", "Accuracy", "Support")?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, m: &Metrics| {
            writeln!(
                f,
                "{:<24} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>8}",
                name, m.precision, m.recall, m.f1, m.accuracy, m.support
            )
        };
        for (task, m) in &self.tasks {
            row(f, task.display_name(), m)?;
        }
        row(f, "Mean", &self.mean)
    }
}

/// Scores probabilities against the labeled entries of `batch`.
pub fn evaluate_probabilities(
    probs: ArrayView2<'_, f64>,
    batch: &LossBatch,
    thresholds: &ThresholdSet,
) -> Result<MetricsReport, EvalError> {
    let predicted = apply(probs, thresholds)?;
    let mut tasks = BTreeMap::new();
    for task in Task::ALL {
        let t = task.index();
        let (p, l): (Vec<u8>, Vec<u8>) = (0..batch.len())
            .filter(|&j| batch.mask[[j, t]] == 1.0)
            .map(|j| (predicted[[j, t]], batch.labels[[j, t]] as u8))
            .unzip();
        if !p.is_empty() {
            tasks.insert(task, weighted_metrics(&p, &l)?);
        }
    }
    if tasks.is_empty() {
        return Err(EvalError::NoTest);
    }
    Ok(MetricsReport::from_tasks(tasks))
}

fn labeled<'a>(records: &'a [Record], task: Task) -> impl Iterator<Item = (&'a Record, u8)> + 'a {
    records.iter().filter_map(move |r| r.label(task).map(|y| (r, y)))
}

/// Guesses class 1 with its training prevalence, independently per record;
/// metrics are averaged over `n_trials` simulations.
pub fn random_baseline(stats: &DatasetStats, records: &[Record], n_trials: usize, seed: u64) -> Result<MetricsReport, EvalError> {
    let mut tasks = BTreeMap::new();
    for task in Task::ALL {
        let labels: Vec<u8> = labeled(records, task).map(|(_, y)| y).collect();
        if labels.is_empty() {
            continue;
        }
        let p1 = stats.tasks.get(&task).ok_or(EvalError::MissingTask(task))?.class_balance[1];
        let mut rng = seed::rng(seed, &format!("baseline/random/{}", task.slug()));
        let mut acc = Metrics::default();
        for _ in 0..n_trials.max(1) {
            let guesses: Vec<u8> = labels.iter().map(|_| u8::from(rng.gen_bool(p1.clamp(0.0, 1.0)))).collect();
            let m = weighted_metrics(&guesses, &labels)?;
            acc.precision += m.precision;
            acc.recall += m.recall;
            acc.f1 += m.f1;
            acc.accuracy += m.accuracy;
        }
        let k = n_trials.max(1) as f64;
        tasks.insert(
            task,
            Metrics {
                precision: acc.precision / k,
                recall: acc.recall / k,
                f1: acc.f1 / k,
                accuracy: acc.accuracy / k,
                support: labels.len(),
            },
        );
    }
    if tasks.is_empty() {
        return Err(EvalError::NoTest);
    }
    Ok(MetricsReport::from_tasks(tasks))
}

/// Multinomial naive Bayes over unigram counts with add-one smoothing.
#[derive(Debug, Clone)]
pub struct NaiveBayes {
    vocab: HashMap<String, usize>,
    log_prior: [f64; 2],
    /// log P(word | class), per class.
    log_likelihood: [Vec<f64>; 2],
}

impl NaiveBayes {
    pub fn fit<'a>(docs: impl IntoIterator<Item = (&'a str, u8)>) -> Option<Self> {
        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut counts: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut class_docs = [0usize; 2];
        for (doc, y) in docs {
            let c = usize::from(y.min(1));
            class_docs[c] += 1;
            for tok in text::normalized_tokens(doc) {
                let next = vocab.len();
                let id = *vocab.entry(tok).or_insert(next);
                for v in counts.iter_mut() {
                    if v.len() <= id {
                        v.resize(id + 1, 0.0);
                    }
                }
                counts[c][id] += 1.0;
            }
        }
        if vocab.is_empty() {
            return None;
        }
        let n_docs = (class_docs[0] + class_docs[1]) as f64;
        let v = vocab.len() as f64;
        let log_likelihood = counts.map(|cnt| {
            let total: f64 = cnt.iter().sum();
            cnt.iter().map(|&k| ((k + 1.0) / (total + v)).ln()).collect()
        });
        let log_prior = class_docs.map(|n| if n == 0 { f64::NEG_INFINITY } else { (n as f64 / n_docs).ln() });
        Some(NaiveBayes { vocab, log_prior, log_likelihood })
    }

    /// Class log-posteriors up to a shared constant; unseen tokens are
    /// ignored.
    pub fn log_posteriors(&self, doc: &str) -> [f64; 2] {
        let mut s = self.log_prior;
        for tok in text::normalized_tokens(doc) {
            if let Some(&id) = self.vocab.get(&tok) {
                for c in 0..2 {
                    s[c] += self.log_likelihood[c][id];
                }
            }
        }
        s
    }

    /// Ties go to the class with the larger prior, then to class 1.
    pub fn predict(&self, doc: &str) -> u8 {
        let s = self.log_posteriors(doc);
        if s[1] > s[0] || (s[1] == s[0] && self.log_prior[1] >= self.log_prior[0]) {
            1
        } else {
            0
        }
    }
}

/// One naive Bayes classifier per task, trained on `train` and scored on
/// `test`.
pub fn unigram_nb_baseline(train: &[Record], test: &[Record]) -> Result<MetricsReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::NoTest);
    }
    let mut tasks = BTreeMap::new();
    for task in Task::ALL {
        let (docs, labels): (Vec<&Record>, Vec<u8>) = labeled(test, task).unzip();
        if docs.is_empty() {
            continue;
        }
        let mut train_docs = labeled(train, task).map(|(r, y)| (r.text.as_str(), y)).peekable();
        if train_docs.peek().is_none() {
            return Err(EvalError::NoTraining(task));
        }
        let nb = NaiveBayes::fit(train_docs).ok_or(EvalError::EmptyVocabulary(task))?;
        let predictions: Vec<u8> = docs.iter().map(|r| nb.predict(&r.text)).collect();
        tasks.insert(task, weighted_metrics(&predictions, &labels)?);
    }
    if tasks.is_empty() {
        return Err(EvalError::NoTest);
    }
    Ok(MetricsReport::from_tasks(tasks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Precision,
    Recall,
    F1,
    Accuracy,
}

impl MetricName {
    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            MetricName::Precision => m.precision,
            MetricName::Recall => m.recall,
            MetricName::F1 => m.f1,
            MetricName::Accuracy => m.accuracy,
        }
    }
}

impl FromStr for MetricName {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().trim_end_matches('.') {
            "precision" => Ok(MetricName::Precision),
            "recall" => Ok(MetricName::Recall),
            "f1" => Ok(MetricName::F1),
            "accuracy" | "acc" => Ok(MetricName::Accuracy),
            other => Err(EvalError::Metric(other.to_string())),
        }
    }
}

/// A previously published result to compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub task: Task,
    pub source: String,
    pub metric: String,
    pub previous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: Task,
    pub source: String,
    pub metric: MetricName,
    pub previous: f64,
    pub new: f64,
    pub absolute_gain: f64,
    /// Percent of `previous`.
    pub relative_gain: f64,
}

/// `(new - previous, 100 (new - previous) / previous)`.
pub fn gains(previous: f64, new: f64) -> (f64, f64) {
    let abs = new - previous;
    (abs, 100.0 * abs / previous)
}

/// Rounds to two decimals, as printed in comparison tables.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Parses the tab-separated reference layout (`task`, `source`, `metric`,
/// `previous`, further columns ignored) with a header line.
pub fn parse_reference_table(src: &str) -> Result<Vec<ReferenceRow>, EvalError> {
    let mut rows = Vec::new();
    for (i, line) in src.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::Reference { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(bad(format!("expected at least 4 columns, got {}", cols.len())));
        }
        let task: Task = cols[0].parse().map_err(|e| bad(format!("{e}")))?;
        let previous: f64 = cols[3].trim().parse().map_err(|e| bad(format!("previous: {e}")))?;
        rows.push(ReferenceRow { task, source: cols[1].to_string(), metric: cols[2].to_string(), previous });
    }
    Ok(rows)
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    parse_reference_table(REFERENCE_TABLE).expect("bundled reference table parses")
}

pub fn compare(report: &MetricsReport, reference: &[ReferenceRow]) -> Result<Vec<ComparisonRow>, EvalError> {
    reference
        .iter()
        .map(|r| {
            let metric: MetricName = r.metric.parse()?;
            let m = report.tasks.get(&r.task).ok_or(EvalError::MissingTask(r.task))?;
            let new = metric.of(m);
            let (absolute_gain, relative_gain) = gains(r.previous, new);
            Ok(ComparisonRow { task: r.task, source: r.source.clone(), metric, previous: r.previous, new, absolute_gain, relative_gain })
        })
        .collect()
}

/// Aligned text rendering of comparison rows.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<24} {:<28} {:<9} {:>9} {:>9} {:>9} {:>9}\n",
        "Task", "Source", "Metric", "Previous", "New", "Abs.gain", "Rel.gain"
    );
    for r in rows {
        out += &format!(
            "{:<24} {:<28} {:<9} {:>9.2} {:>9.2} {:>9.2} {:>9.2}\n",
            r.task.display_name(),
            r.source,
            format!("{:?}", r.metric).to_lowercase(),
            r.previous,
            r.new,
            r.absolute_gain,
            r.relative_gain
        );
    }
    out
}
