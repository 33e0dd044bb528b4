//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; the process exits non-zero if
//! any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use argmine::checkpoint::Checkpoint;
use argmine::corpus::{read_jsonl, split, stats, synthesize, synthesize_with, write_jsonl, Record, Split, SplitRatios, SynthConfig};
use argmine::diagnostics::{gaussian_blobs, profile, silhouette, tsne, ProfileConfig, TsneConfig, Variant, PROFILE_FRACTIONS};
use argmine::encoder::{EncoderConfig, HashedBow};
use argmine::eval::{evaluate_probabilities, gains, round2, MetricsReport};
use argmine::head::{output_layer, param_count, task_layer, technique_probabilities, type_layer, Head, HeadConfig, BLOCK_DEPTH};
use argmine::loss::{class_weights_from_balance, compute_class_weights, compute_type_weights, masked_bce, LossBatch, LossWeights};
use argmine::model::Model;
use argmine::nn::Mode;
use argmine::registry::{Task, TaskType, NUM_TASKS};
use argmine::seed;
use argmine::thresholds::{tune, tune_all, youden_j, ThresholdSet};
use argmine::train::{build_model, lr_schedule, train_scoped, validate, EarlyStopping, Scope, StopDecision, TrainConfig, TrainHistory};
use common::{oracle_loss, random_batch, random_weights};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

#[global_allocator]
static ALLOC: argmine::memory::PeakAlloc = argmine::memory::PeakAlloc;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

// 1
fn loss_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(1, "acceptance/oracle");
    let mut worst = 0.0f64;
    for i in 0..200 {
        let n = rng.gen_range(1..=64);
        let (probs, batch) = random_batch(&mut rng, n);
        let w = random_weights(&mut rng);
        let fast = masked_bce(probs.view(), &batch, &w).map_err(|e| e.to_string())?;
        let diff = (fast - oracle_loss(&probs, &batch, &w)).abs();
        check(diff <= 1e-9, || format!("batch {i}: differs by {diff:e}"))?;
        worst = worst.max(diff);
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("200 batches, max |diff| {worst:.1e}"))
}

fn small_model(rng: &mut impl Rng, s: u64) -> Model {
    let enc_cfg = EncoderConfig { embedding_dim: 6, vocabulary_hash_buckets: 48, seed: s, ..Default::default() };
    let mut encoder = HashedBow::new(&enc_cfg);
    encoder.bias.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    let head_cfg = HeadConfig { input_dim: 6, hidden_width: 5, dropout_rate: 0.0, ..Default::default() };
    let mut head = Head::init(head_cfg, &mut seed::rng(s, "acceptance/head")).unwrap();
    for layer in &mut head.layers {
        layer.bias.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    }
    Model::new(Box::new(encoder), head).unwrap()
}

// 2
fn gradient_check() -> Outcome {
    let start = Instant::now();
    let corpus = synthesize(12, 0.8, 2);
    let mut rng = seed::rng(2, "acceptance/gradients");
    let h = 1e-6;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for instance in 0..10 {
        let mut model = small_model(&mut rng, instance);
        let n = rng.gen_range(6..=12);
        let records: Vec<&Record> = corpus.choose_multiple(&mut rng, n).collect();
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        let batch = LossBatch::from_records(&records);
        let w = random_weights(&mut rng);
        let (_, grads) = model.loss_and_grads(&texts, &batch, &w, Mode::Eval, &mut seed::rng(0, "unused")).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for (t, g) in analytic.iter().enumerate() {
            for (i, &a) in g.iter().enumerate() {
                let orig = model.parameters_mut()[t][i];
                model.parameters_mut()[t][i] = orig + h;
                let up = model.loss(&texts, &batch, &w).unwrap();
                model.parameters_mut()[t][i] = orig - h;
                let down = model.loss(&texts, &batch, &w).unwrap();
                model.parameters_mut()[t][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let abs = (a - fd).abs();
                // Gradients that vanish analytically carry only rounding noise.
                let rel = if abs < 1e-9 { 0.0 } else { abs / a.abs().max(fd.abs()) };
                check(rel < 1e-4, || format!("instance {instance}, tensor {t}[{i}]: {a} vs {fd}"))?;
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!("{checked} parameters over 10 instances, max rel err {worst:.1e}"))
}

// 3
fn mask_invariance() -> Outcome {
    let mut rng = seed::rng(3, "acceptance/mask");
    for i in 0..100 {
        let n = rng.gen_range(1..=64);
        let (probs, batch) = random_batch(&mut rng, n);
        let w = random_weights(&mut rng);
        let base = masked_bce(probs.view(), &batch, &w).map_err(|e| e.to_string())?;
        let mut p2 = probs.clone();
        let mut b2 = batch.clone();
        for ((j, t), &m) in batch.mask.indexed_iter() {
            if m == 0.0 {
                p2[[j, t]] = rng.gen();
                b2.labels[[j, t]] = f64::from(rng.gen_range(0u8..2));
            }
        }
        let moved = masked_bce(p2.view(), &b2, &w).map_err(|e| e.to_string())?;
        check(moved == base, || format!("instance {i}: {base} became {moved}"))?;
    }
    Ok("100 instances, loss unchanged bit for bit".into())
}

fn disagree_agree_records(zeros: usize, ones: usize) -> Vec<Record> {
    let mut out = synthesize(60, 1.0, 4);
    for r in &mut out {
        r.split = Some(Split::Train);
        r.labels.remove(&Task::DisagreeAgree);
        if r.task_type == TaskType::Iac && r.labels.is_empty() {
            r.labels.insert(Task::NastyNice, 0);
        }
    }
    let iac = out.iter().find(|r| r.task_type == TaskType::Iac).unwrap().clone();
    for i in 0..zeros + ones {
        let mut r = iac.clone();
        r.record_id = format!("da-{i}");
        r.labels = BTreeMap::from([(Task::DisagreeAgree, u8::from(i >= zeros)), (Task::NastyNice, (i % 2) as u8)]);
        out.push(r);
    }
    out
}

// 4
fn weight_formulas() -> Outcome {
    let tw = compute_type_weights([100, 200, 700]).map_err(|e| e.to_string())?;
    let want = [14.0 / 23.0, 7.0 / 23.0, 2.0 / 23.0];
    check(tw == want, || format!("type weights {tw:?}, expected {want:?}"))?;
    let st = stats(&disagree_agree_records(21, 79)).map_err(|e| e.to_string())?;
    let cw = compute_class_weights(&st).map_err(|e| e.to_string())?[Task::DisagreeAgree.index()];
    let direct = class_weights_from_balance([0.21, 0.79]).map_err(|c| format!("class {c} empty"))?;
    // (1/p) normalized to mean 1: 2·0.79 and 2·0.21 for a two-class task.
    for w in [cw, direct] {
        check((w[0] - 1.580).abs() < 1e-3 && (w[1] - 0.420).abs() < 1e-3, || format!("class weights {w:?}"))?;
    }
    Ok(format!("type weights (14/23, 7/23, 2/23) exact, class weights ({:.3}, {:.3})", cw[0], cw[1]))
}

fn branch_layers(i: usize) -> (Vec<usize>, Vec<Task>) {
    if i < NUM_TASKS {
        let task = Task::ALL[i];
        let mut layers: Vec<usize> = (0..BLOCK_DEPTH).map(|d| task_layer(task, d)).collect();
        layers.push(output_layer(task));
        (layers, vec![task])
    } else {
        let ty = TaskType::ALL[i - NUM_TASKS];
        ((0..BLOCK_DEPTH).map(|d| type_layer(ty, d)).collect(), ty.tasks().collect())
    }
}

// 5
fn head_structure() -> Outcome {
    let cfg = HeadConfig { hidden_width: 22, ..Default::default() };
    let n = param_count(&cfg);
    check(n == 17_121, || format!("param_count(22) = {n}"))?;
    let rel = (n as f64 - 17_024.0).abs() / 17_024.0;
    check(rel < 0.01, || format!("{n} is {:.2}% from 17024", rel * 100.0))?;

    let mut rng = seed::rng(5, "acceptance/head");
    let small = HeadConfig { input_dim: 16, hidden_width: 6, dropout_rate: 0.0, ..Default::default() };
    for i in 0..1000 {
        let head = Head::init(small.clone(), &mut seed::rng(i, "acceptance/head/init")).unwrap();
        let x = Array2::from_shape_fn((3, 16), |_| rng.gen_range(-2.0..2.0));
        let before = head.forward_eval(x.view()).unwrap();

        // Perturbing one task or task-type branch moves only the outputs under it.
        let (layers, owned) = branch_layers(rng.gen_range(0..NUM_TASKS + TaskType::ALL.len()));
        let mut bumped = head.clone();
        for &l in &layers {
            bumped.layers[l].weight.mapv_inplace(|v| v + rng.gen_range(-1.0..1.0));
            bumped.layers[l].bias.mapv_inplace(|v| v + rng.gen_range(-1.0..1.0));
        }
        let after = bumped.forward_eval(x.view()).unwrap();
        for task in Task::ALL.into_iter().filter(|t| !owned.contains(t)) {
            let t = task.index();
            check(before.probabilities.column(t) == after.probabilities.column(t), || {
                format!("instance {i}: perturbing {owned:?} moved {task}")
            })?;
        }

        let techniques = technique_probabilities(&before);
        for (j, row) in techniques.rows().into_iter().enumerate() {
            let pooled = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let got = before.probabilities[[j, Task::Propaganda.index()]];
            check(got == pooled, || format!("instance {i}: pooled {got} vs max technique {pooled}"))?;
        }
    }

    let zero = Head::zeros(HeadConfig::default()).unwrap();
    let x = Array2::from_shape_fn((4, 128), |(i, j)| (i * 128 + j) as f64 - 200.0);
    let p = zero.forward_eval(x.view()).unwrap().probabilities;
    check(p.iter().all(|&v| v == 0.5), || "zero head output differs from 0.5".into())?;
    Ok(format!("{n} parameters ({:.2}% from 17024); isolation and pooling over 1000 heads; zero head gives 0.5", rel * 100.0))
}

/// Youden's J at every candidate, counted from scratch.
fn exhaustive_best_j(scores: &[f64], labels: &[u8]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut cands = vec![1e-7, 1.0 - 1e-7];
    for w in sorted.windows(2) {
        cands.push((w[0] + w[1]) / 2.0);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    cands
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0.0, 0.0);
            for (&s, &l) in scores.iter().zip(labels) {
                if s > t {
                    if l == 1 {
                        tp += 1.0
                    } else {
                        fp += 1.0
                    }
                }
            }
            tp / pos - fp / neg
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn count_optima(scores: &[f64], labels: &[u8], best: f64) -> usize {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut cands = vec![1e-7, 1.0 - 1e-7];
    cands.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cands.iter().filter(|&&t| (youden_j(scores, labels, t) - best).abs() < 1e-12).count()
}

fn random_transform(rng: &mut impl Rng) -> Box<dyn Fn(f64) -> f64> {
    match rng.gen_range(0..5) {
        0 => {
            let p = rng.gen_range(0.3..3.0);
            Box::new(move |x: f64| x.powf(p))
        }
        1 => {
            let a = rng.gen_range(0.001..0.4);
            let b = rng.gen_range(0.6..0.999);
            Box::new(move |x| a + (b - a) * x)
        }
        2 => {
            let k = rng.gen_range(0.5..20.0);
            Box::new(move |x: f64| (k * x).ln_1p() / k.ln_1p())
        }
        3 => {
            let k = rng.gen_range(1.0..12.0);
            let c = rng.gen_range(0.2..0.8);
            let s = move |x: f64| 1.0 / (1.0 + (-k * (x - c)).exp());
            let (lo, hi) = (s(0.0), s(1.0));
            Box::new(move |x| 0.001 + 0.998 * (s(x) - lo) / (hi - lo))
        }
        _ => Box::new(|x: f64| (x * std::f64::consts::FRAC_PI_2).sin()),
    }
}

// 6
fn threshold_optimality() -> Outcome {
    let mut rng = seed::rng(6, "acceptance/thresholds");
    let (mut unique, mut total) = (0usize, 0usize);
    for set in 0..1000 {
        let n = rng.gen_range(2..=120);
        let coarse = rng.gen_bool(0.3);
        let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        if coarse {
            scores.iter_mut().for_each(|s| *s = (*s * 20.0).round() / 20.0);
            scores.iter_mut().for_each(|s| *s = s.clamp(0.01, 0.99));
        }
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let tuned = tune(&scores, &labels).map_err(|e| e.to_string())?;
        let best = exhaustive_best_j(&scores, &labels);
        check((tuned.j - best).abs() < 1e-12, || format!("set {set}: tuned J {} vs exhaustive {best}", tuned.j))?;
        check((youden_j(&scores, &labels, tuned.threshold) - best).abs() < 1e-12, || {
            format!("set {set}: J at the returned threshold is not the maximum")
        })?;

        let single = count_optima(&scores, &labels, best) == 1;
        let predicted: Vec<bool> = scores.iter().map(|&s| s > tuned.threshold).collect();
        for k in 0..10 {
            let f = random_transform(&mut rng);
            let moved: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            let t2 = tune(&moved, &labels).map_err(|e| e.to_string())?;
            check((t2.j - tuned.j).abs() < 1e-12, || format!("set {set}, transform {k}: J {} vs {}", t2.j, tuned.j))?;
            if single {
                let p2: Vec<bool> = moved.iter().map(|&s| s > t2.threshold).collect();
                check(p2 == predicted, || format!("set {set}, transform {k}: different partition"))?;
            }
            total += 1;
        }
        unique += usize::from(single);
    }
    Ok(format!("1000 sets match the exhaustive scan; {total} transforms keep J ({unique} sets with a unique optimum keep the partition)"))
}

fn smoke_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 7e-4,
        dropout_rate: 0.0,
        batch_size: 32,
        max_epochs: 5,
        early_stop_patience: 5,
        seed,
        ..Default::default()
    }
}

struct Pipeline {
    model: Model,
    weights: LossWeights,
    history: TrainHistory,
    thresholds: ThresholdSet,
    report: MetricsReport,
}

fn by_split(records: &[Record], s: Split) -> Vec<Record> {
    records.iter().filter(|r| r.split == Some(s)).cloned().collect()
}

fn texts(records: &[&Record]) -> Vec<String> {
    records.iter().map(|r| r.text.clone()).collect()
}

/// synthesize → interchange file → split and statistics → train → tune on
/// VAL → evaluate on TEST.
fn pipeline(dir: &Path, n_per_type: usize, cfg: &TrainConfig) -> Result<Pipeline, String> {
    let s = cfg.seed;
    let raw = synthesize(n_per_type, 1.0, s);
    let raw_path = dir.join("records.jsonl");
    write_jsonl(&raw, std::fs::File::create(&raw_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let read = read_jsonl(std::io::BufReader::new(std::fs::File::open(&raw_path).map_err(|e| e.to_string())?))
        .map_err(|e| e.to_string())?;
    let corpus = split(read, SplitRatios::default(), s).map_err(|e| e.to_string())?;
    write_jsonl(&corpus, std::fs::File::create(dir.join("corpus.jsonl")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let weights = LossWeights::from_stats(&stats(&corpus).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let (train, val) = (by_split(&corpus, Split::Train), by_split(&corpus, Split::Val));
    let mut model = build_model(&EncoderConfig { seed: s, ..Default::default() }, &HeadConfig::default(), s)
        .map_err(|e| e.to_string())?;
    let history =
        train_scoped(&mut model, &train, &val, &weights, cfg, Scope::MultiTask, &mut |_| {}).map_err(|e| e.to_string())?;

    let val_refs: Vec<&Record> = val.iter().collect();
    let vt = texts(&val_refs);
    let vt: Vec<&str> = vt.iter().map(String::as_str).collect();
    let (thresholds, _) = tune_all(model.predict(&vt).map_err(|e| e.to_string())?.view(), &LossBatch::from_records(&val_refs))
        .map_err(|e| e.to_string())?;
    let test: Vec<&Record> = corpus.iter().filter(|r| r.split == Some(Split::Test)).collect();
    let tt = texts(&test);
    let tt: Vec<&str> = tt.iter().map(String::as_str).collect();
    let report = evaluate_probabilities(model.predict(&tt).map_err(|e| e.to_string())?.view(), &LossBatch::from_records(&test), &thresholds)
        .map_err(|e| e.to_string())?;
    Ok(Pipeline { model, weights, history, thresholds, report })
}

const SMOKE_PER_TYPE: usize = 3000;

// 7
fn smoke(dir: &Path) -> Outcome {
    let start = Instant::now();
    let run = pipeline(dir, SMOKE_PER_TYPE, &smoke_config(0))?;
    let elapsed = start.elapsed();
    let worst = Task::ALL
        .iter()
        .map(|&t| (t, run.report.f1(t).unwrap_or(0.0)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    check(worst.1 >= 95.0, || format!("{} F1 {:.2} < 95", worst.0, worst.1))?;
    let losses: Vec<f64> = run.history.epochs.iter().map(|e| e.train_loss).collect();
    check(losses.windows(2).all(|w| w[1] < w[0]), || format!("training loss not strictly decreasing: {losses:?}"))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(format!(
        "{SMOKE_PER_TYPE}/type, {} epochs, min F1 {:.2} ({}), mean {:.2}, {:.1}s",
        losses.len(),
        worst.1,
        worst.0,
        run.report.mean.f1,
        elapsed.as_secs_f64()
    ))
}

// 8
fn multi_vs_single() -> Outcome {
    let s = 8;
    let synth = SynthConfig { n_per_type: 600, separability: 0.7, seed: s, shared_cue_pool: Some(8), ..Default::default() };
    let corpus = split(synthesize_with(&synth), SplitRatios::default(), s).map_err(|e| e.to_string())?;
    let weights = LossWeights::from_stats(&stats(&corpus).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (train, val) = (by_split(&corpus, Split::Train), by_split(&corpus, Split::Val));
    let cfg = smoke_config(s);
    let enc = EncoderConfig { seed: s, ..Default::default() };

    let fit = |scope: Scope| -> Result<TrainHistory, String> {
        let mut model = build_model(&enc, &HeadConfig::default(), s).map_err(|e| e.to_string())?;
        train_scoped(&mut model, &train, &val, &weights, &cfg, scope, &mut |_| {}).map_err(|e| e.to_string())
    };
    let multi = fit(Scope::MultiTask)?;
    let multi_f1 = multi.best().map(|e| e.mean_val_f1).unwrap_or(0.0);
    let (mut single_f1, mut single_secs) = (0.0, 0.0);
    for task in Task::ALL {
        let h = fit(Scope::SingleTask(task))?;
        single_f1 += h.best().and_then(|e| e.val_f1.get(&task).copied()).unwrap_or(0.0) / NUM_TASKS as f64;
        single_secs += h.wall_seconds;
    }
    check(multi_f1 >= single_f1, || format!("multi-task F1 {multi_f1:.2} < single-task mean {single_f1:.2}"))?;
    check(multi.wall_seconds < single_secs, || {
        format!("multi-task {:.2}s >= single-task total {single_secs:.2}s", multi.wall_seconds)
    })?;
    Ok(format!(
        "val F1 {multi_f1:.2} vs {single_f1:.2}; time {:.2}s vs {single_secs:.2}s ({:.0}% less)",
        multi.wall_seconds,
        100.0 * (1.0 - multi.wall_seconds / single_secs)
    ))
}

// 9
fn comparison_arithmetic() -> Outcome {
    let cases = [((68.20, 70.73), (2.53, 3.71)), ((46.20, 63.93), (17.73, 38.38))];
    for ((prev, new), want) in cases {
        let (abs, rel) = gains(prev, new);
        let got = (round2(abs), round2(rel));
        check(got == want, || format!("gains({prev}, {new}) = {got:?}, expected {want:?}"))?;
    }
    Ok("(2.53, 3.71) and (17.73, 38.38)".into())
}

// 10
fn early_stopping_and_warmup() -> Outcome {
    let mut es = EarlyStopping::new(2);
    // Parameters stand in for the model after each epoch.
    let mut params = 0.0;
    let mut kept = params;
    let mut stopped_after = None;
    for (epoch, loss) in [1.0, 0.9, 0.95, 0.97].into_iter().enumerate() {
        params += 1.0;
        match es.update(loss) {
            StopDecision::Improved => kept = params,
            StopDecision::Continue => {}
            StopDecision::Stop => {
                params = kept;
                stopped_after = Some(epoch + 1);
                break;
            }
        }
    }
    check(stopped_after == Some(4) && es.best_epoch == 2 && params == 2.0, || {
        format!("stopped after {stopped_after:?}, best epoch {}, restored {params}", es.best_epoch)
    })?;

    // A real run restores the parameters of its best epoch.
    let corpus = split(synthesize(200, 0.6, 10), SplitRatios::default(), 10).map_err(|e| e.to_string())?;
    let weights = LossWeights::from_stats(&stats(&corpus).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (train, val) = (by_split(&corpus, Split::Train), by_split(&corpus, Split::Val));
    let cfg = TrainConfig { learning_rate: 1e-2, dropout_rate: 0.0, batch_size: 16, max_epochs: 12, seed: 10, ..Default::default() };
    let mut model = build_model(&EncoderConfig { seed: 10, ..Default::default() }, &HeadConfig::default(), 10).unwrap();
    let history = train_scoped(&mut model, &train, &val, &weights, &cfg, Scope::MultiTask, &mut |_| {}).map_err(|e| e.to_string())?;
    let val_refs: Vec<&Record> = val.iter().collect();
    let (loss, _) = validate(&model, &val_refs, &weights, Scope::MultiTask, 256).map_err(|e| e.to_string())?;
    let best = history.best().ok_or("empty history")?;
    check(loss == best.val_loss, || format!("restored val loss {loss} vs best {}", best.val_loss))?;

    let warm = TrainConfig { learning_rate: 3e-4, warmup_fraction: 0.05, ..Default::default() };
    let lr = lr_schedule(25, 1000, &warm);
    check((lr - 1.5e-4).abs() < 1e-15, || format!("lr at half warm-up {lr}"))?;
    Ok(format!(
        "stops after epoch 4 keeping epoch 2; a {}-epoch run restores epoch {} exactly; half warm-up lr {lr:e}",
        history.epochs.len(),
        history.best_epoch
    ))
}

fn artifacts(dir: &Path, run: &Pipeline, enc: &EncoderConfig, cfg: &TrainConfig) -> Result<(), String> {
    run.thresholds.save(&dir.join("thresholds.json")).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("metrics.json"), run.report.to_json()).map_err(|e| e.to_string())?;
    Checkpoint::from_model(&run.model, enc, &run.weights, cfg, None)
        .save(&dir.join("checkpoint.json"))
        .map_err(|e| e.to_string())
}

// 11
fn determinism(dir: &Path) -> Outcome {
    let cfg = TrainConfig { max_epochs: 2, ..smoke_config(11) };
    let enc = EncoderConfig { seed: 11, ..Default::default() };
    let mut files = Vec::new();
    for i in 0..2 {
        let d = dir.join(format!("run{i}"));
        std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        let run = pipeline(&d, 300, &cfg)?;
        artifacts(&d, &run, &enc, &cfg)?;
        files.push(d);
    }
    let names = ["records.jsonl", "corpus.jsonl", "thresholds.json", "metrics.json", "checkpoint.json"];
    for name in names {
        let a = std::fs::read(files[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(files[1].join(name)).map_err(|e| e.to_string())?;
        check(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", names.len()))
}

// 12
fn diagnostics() -> Outcome {
    let (x, labels) = gaussian_blobs(100, 128, 20.0, 12);
    let y = tsne(x.view(), &TsneConfig { seed: 12, ..Default::default() }).map_err(|e| e.to_string())?;
    let sil = silhouette(y.view(), &labels).map_err(|e| e.to_string())?;
    check(sil > 0.5, || format!("silhouette {sil:.3}"))?;

    let corpus = split(synthesize(SMOKE_PER_TYPE, 1.0, 12), SplitRatios::default(), 12).map_err(|e| e.to_string())?;
    let weights = LossWeights::from_stats(&stats(&corpus).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let config = ProfileConfig {
        fractions: PROFILE_FRACTIONS.to_vec(),
        encoder: EncoderConfig { seed: 12, ..Default::default() },
        head: HeadConfig::default(),
        train: smoke_config(12),
        warm_up: true,
    };
    let rows = profile(&[Variant::MultiTask, Variant::SingleTask], &corpus, &weights, &config).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for variant in ["multi_task", "single_task"] {
        let times: Vec<f64> = rows.iter().filter(|r| r.model_variant == variant).map(|r| r.wall_seconds).collect();
        check(times.len() == 4, || format!("{variant}: {} rows", times.len()))?;
        check(times.windows(2).all(|w| w[1] >= w[0]), || format!("{variant} times not monotone: {times:?}"))?;
        summary.push(format!("{variant} {}", times.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join("/")));
    }
    Ok(format!("silhouette {sil:.3}; epoch seconds {}", summary.join(", ")))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let smoke_dir = dir.path().join("smoke");
    std::fs::create_dir_all(&smoke_dir).unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("loss matches the scalar oracle", Box::new(loss_oracle)),
        ("analytic gradients match finite differences", Box::new(gradient_check)),
        ("masked-out entries do not affect the loss", Box::new(mask_invariance)),
        ("type and class weight formulas", Box::new(weight_formulas)),
        ("head size, branch isolation, pooling, zero head", Box::new(head_structure)),
        ("threshold optimality and rank invariance", Box::new(threshold_optimality)),
        ("end-to-end smoke run", Box::new(|| smoke(&smoke_dir))),
        ("multi-task beats single-task at desk scale", Box::new(multi_vs_single)),
        ("comparison gain arithmetic", Box::new(comparison_arithmetic)),
        ("early stopping and warm-up", Box::new(early_stopping_and_warmup)),
        ("identical seeds give identical files", Box::new(|| determinism(dir.path()))),
        ("t-SNE separation and profile monotonicity", Box::new(diagnostics)),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("C{:02}", i + 1);
        if filter.as_deref().is_some_and(|f| !id.eq_ignore_ascii_case(f) && !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {id} {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
