use std::collections::BTreeMap;

use argmine::augment::{
    augment_corpus, back_translate, contextual_substitute, crop_tokens, random_crop, synonym_substitute, AugmenterConfig,
    EchoPredictor, MaskedPredictor, Method, ProviderError, Providers, SynonymTable, Translator,
};
use argmine::corpus::{split, synthesize, Record, Split, SplitRatios};
use argmine::eval::weighted_metrics;
use argmine::head::{max_pool_propaganda, shared_layer, Head, HeadConfig};
use argmine::nn::Mode;
use argmine::registry::{Task, TaskType, NUM_TECHNIQUES};
use argmine::seed;
use argmine::text::{normalized_tokens, token_count, tokenize};
use argmine::thresholds::{apply, ThresholdSet};
use argmine::train::{EarlyStopping, StopDecision};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const WORDS: [&str; 16] = [
    "good", "bad", "happy", "claim", "because", "never", "always", "people", "think", "argue", "very", "big", "small",
    "true", "false", "reason",
];
const PUNCT: [&str; 5] = [",", ".", "!", "?", ";"];

fn random_record(s: u64) -> Record {
    let mut rng = seed::rng(s, "properties/record");
    let n = rng.gen_range(1..40);
    let mut text = String::new();
    for i in 0..n {
        if i > 0 {
            text.push(' ');
        }
        text.push_str(WORDS.choose(&mut rng).unwrap());
        if rng.gen_bool(0.15) {
            text.push_str(PUNCT.choose(&mut rng).unwrap());
        }
    }
    let ty = TaskType::ALL[rng.gen_range(0..3)];
    let mut labels = BTreeMap::new();
    for t in ty.tasks() {
        if rng.gen_bool(0.6) {
            labels.insert(t, rng.gen_range(0..2u8));
        }
    }
    if labels.is_empty() {
        labels.insert(ty.tasks().next().unwrap(), 1);
    }
    let raw = (ty == TaskType::Propaganda).then(|| {
        let mut raw = [0u8; NUM_TECHNIQUES];
        if labels[&Task::Propaganda] == 1 {
            raw[rng.gen_range(0..NUM_TECHNIQUES)] = 1;
        }
        raw
    });
    Record {
        record_id: format!("r{s}"),
        text,
        task_type: ty,
        labels,
        raw_technique_labels: raw,
        split: Some(Split::Train),
        augmented_from: None,
    }
}

struct Reverse;
impl Translator for Reverse {
    fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, ProviderError> {
        Ok(text.chars().rev().collect())
    }
}

struct Upper;
impl MaskedPredictor for Upper {
    fn predict(&self, tokens: &[&str], index: usize) -> String {
        tokens[index].to_uppercase()
    }
}

fn is_subsequence(small: &[String], big: &[String]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn augmentation_preserves_labels_and_type(s in any::<u64>()) {
        let r = random_record(s);
        let cfg = AugmenterConfig { seed: s, ..Default::default() };
        let table = SynonymTable::bundled();
        let mut outs = vec![
            back_translate(&r, &Reverse, &cfg).unwrap(),
            contextual_substitute(&r, &Upper, &cfg).unwrap(),
            synonym_substitute(&r, &table, &cfg).unwrap(),
        ];
        outs.extend(random_crop(&r, &cfg).ok());
        for out in outs {
            prop_assert_eq!(&out.labels, &r.labels);
            prop_assert_eq!(out.task_type, r.task_type);
            prop_assert_eq!(&out.raw_technique_labels, &r.raw_technique_labels);
            prop_assert_eq!(out.split, Some(Split::Train));
            prop_assert_eq!(out.augmented_from.as_deref(), Some(r.record_id.as_str()));
        }
    }

    #[test]
    fn substitutions_keep_the_token_count(s in any::<u64>()) {
        let r = random_record(s);
        let cfg = AugmenterConfig { seed: s, ..Default::default() };
        let n = token_count(&r.text);
        let ctx = contextual_substitute(&r, &Upper, &cfg).unwrap();
        prop_assert_eq!(token_count(&ctx.text), n);
        let changed = tokenize(&ctx.text).iter().zip(tokenize(&r.text)).filter(|(a, b)| a.text != b.text).count();
        prop_assert!(changed <= cfg.positions_for(n));
        let syn = synonym_substitute(&r, &SynonymTable::bundled(), &cfg).unwrap();
        prop_assert_eq!(token_count(&syn.text), n);
    }

    #[test]
    fn crop_keeps_a_subsequence(s in any::<u64>()) {
        let r = random_record(s);
        let cfg = AugmenterConfig { seed: s, ..Default::default() };
        let before = normalized_tokens(&r.text);
        match random_crop(&r, &cfg) {
            Ok(out) => {
                let after = normalized_tokens(&out.text);
                prop_assert_eq!(after.len(), before.len() - cfg.positions_for(before.len()));
                prop_assert!(is_subsequence(&after, &before));
            }
            Err(_) => prop_assert!(before.len() < 2 || cfg.positions_for(before.len()) >= before.len()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augment_corpus_is_deterministic_and_train_only(s in any::<u64>(), n in 1usize..30) {
        let records: Vec<Record> = (0..n as u64).map(|i| random_record(s.wrapping_add(i))).collect();
        let providers = Providers { translator: &Reverse, predictor: &EchoPredictor, synonyms: &SynonymTable::bundled() };
        let cfg = AugmenterConfig { seed: s, ..Default::default() };
        let a = augment_corpus(&records, providers, &cfg).unwrap();
        let b = augment_corpus(&records, providers, &cfg).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(a.records.len() + a.diagnostics.len(), n * (1 + Method::ALL.len()));
        prop_assert!(a.records.iter().all(|r| r.split == Some(Split::Train)));
    }

    #[test]
    fn crop_tokens_removes_exactly_the_listed_positions(n in 1usize..30, s in any::<u64>()) {
        let mut rng = seed::rng(s, "properties/crop");
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        let k = rng.gen_range(0..n);
        let mut deleted: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        deleted.sort_unstable();
        let out = crop_tokens(&refs, &deleted);
        let kept: Vec<&str> = out.split_whitespace().collect();
        let want: Vec<&str> = refs.iter().enumerate().filter(|(i, _)| !deleted.contains(i)).map(|(_, t)| *t).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn split_assignment_ignores_input_order(s in any::<u64>(), n in 20usize..120) {
        let records = synthesize(n, 1.0, s);
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut seed::rng(s, "properties/shuffle"));
        let a = split(records.clone(), SplitRatios::default(), s).unwrap();
        let b = split(shuffled, SplitRatios::default(), s).unwrap();
        let key = |rs: &[Record]| rs.iter().map(|r| (r.record_id.clone(), r.split)).collect::<BTreeMap<_, _>>();
        prop_assert_eq!(a.len(), records.len());
        prop_assert!(a.iter().all(|r| r.split.is_some()));
        prop_assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn synthetic_propaganda_label_is_the_technique_max(s in any::<u64>(), sep in 0.0f64..=1.0) {
        for r in synthesize(30, sep, s).iter().filter(|r| r.task_type == TaskType::Propaganda) {
            let pooled = r.raw_technique_labels.unwrap().into_iter().max().unwrap();
            prop_assert_eq!(r.label(Task::Propaganda), Some(pooled));
        }
    }

    #[test]
    fn dropout_zero_train_equals_eval(s in any::<u64>()) {
        let cfg = HeadConfig { input_dim: 12, hidden_width: 7, dropout_rate: 0.0, ..Default::default() };
        let head = Head::init(cfg, &mut seed::rng(s, "properties/head")).unwrap();
        let x = Array2::from_shape_fn((4, 12), |(i, j)| ((s as usize % 97 + i * 12 + j) as f64 * 0.61).sin());
        let train = head.forward(x.view(), Mode::Train, &mut seed::rng(s, "dropout")).unwrap();
        prop_assert_eq!(train.trace, head.forward_eval(x.view()).unwrap());
    }

    #[test]
    fn pooling_is_monotone(z in proptest::collection::vec(0.0f64..1.0, NUM_TECHNIQUES), k in 0..NUM_TECHNIQUES, up in 0.0f64..1.0) {
        let before = max_pool_propaganda(&z).unwrap();
        let mut raised = z.clone();
        raised[k] = (raised[k] + up).min(1.0);
        prop_assert!(max_pool_propaganda(&raised).unwrap() >= before);
    }

    #[test]
    fn shared_layers_reach_every_task(s in any::<u64>()) {
        let cfg = HeadConfig { input_dim: 8, hidden_width: 6, dropout_rate: 0.0, ..Default::default() };
        let mut head = Head::init(cfg, &mut seed::rng(s, "properties/shared")).unwrap();
        // Small positive weights and biases keep every ReLU active without
        // saturating the sigmoid.
        for layer in &mut head.layers {
            layer.weight.mapv_inplace(|w| 0.3 * w.abs());
            layer.bias.fill(0.1);
        }
        let x = Array2::from_elem((1, 8), 0.1);
        let before = head.forward_eval(x.view()).unwrap().probabilities;
        head.layers[shared_layer(0)].bias.mapv_inplace(|b| b + 0.5);
        let after = head.forward_eval(x.view()).unwrap().probabilities;
        for t in Task::ALL {
            prop_assert!(before[[0, t.index()]] != after[[0, t.index()]], "{t} unchanged");
        }
    }

    #[test]
    fn apply_is_monotone(p in 0.0f64..1.0, up in 0.0f64..0.5, t in 0.01f64..0.99) {
        let th = ThresholdSet { thresholds: Task::ALL.iter().map(|&k| (k, t)).collect() };
        let low = Array2::from_elem((1, 10), p);
        let high = Array2::from_elem((1, 10), (p + up).min(1.0));
        let a = apply(low.view(), &th).unwrap();
        let b = apply(high.view(), &th).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x <= y));
    }

    #[test]
    fn weighted_metrics_properties(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..80), s in any::<u64>()) {
        let (pred, lab): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let m = weighted_metrics(&pred, &lab).unwrap();
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
        }
        prop_assert!((weighted_metrics(&lab, &lab).unwrap().f1 - 100.0).abs() < 1e-9);

        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut seed::rng(s, "properties/metrics"));
        let (p2, l2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        let m2 = weighted_metrics(&p2, &l2).unwrap();
        prop_assert!((m.f1 - m2.f1).abs() < 1e-9 && (m.precision - m2.precision).abs() < 1e-9);

        // Per-class F1 from raw counts.
        let class_f1 = |c: u8| {
            let tp = pairs.iter().filter(|&&(p, l)| p == c && l == c).count() as f64;
            let fp = pairs.iter().filter(|&&(p, l)| p == c && l != c).count() as f64;
            let fnn = pairs.iter().filter(|&&(p, l)| p != c && l == c).count() as f64;
            if tp == 0.0 { 0.0 } else { 200.0 * tp / (2.0 * tp + fp + fnn) }
        };
        let present: Vec<f64> = (0..2u8).filter(|&c| lab.contains(&c)).map(class_f1).collect();
        let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m.f1 >= lo - 1e-9 && m.f1 <= hi + 1e-9);
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch_seen(losses in proptest::collection::vec(0.0f64..2.0, 1..30), patience in 1usize..5) {
        let mut es = EarlyStopping::new(patience);
        let mut seen = Vec::new();
        for &l in &losses {
            seen.push(l);
            if es.update(l) == StopDecision::Stop {
                break;
            }
        }
        let min = seen.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(es.best_loss, min);
        let first = seen.iter().position(|&l| l == min).unwrap() + 1;
        prop_assert_eq!(es.best_epoch, first);
    }
}
