//! Tiny random BERT, ELECTRA and ALBERT models whose token ids and summary
//! vectors were computed by the reference Python implementation in float64
//! (see tests/fixtures/make_tiny_transformers.py).

use std::path::PathBuf;

use argmine::encoder::{load_encoder, EncoderConfig, EncoderError, EncoderKind, Family, TextEncoder, Transformer};
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    max_len: usize,
    texts: Vec<String>,
    ids: Vec<Vec<u32>>,
    summary: Vec<Vec<f64>>,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(name: &str, family: Family) {
    let dir = fixture(name);
    let expected: Expected = serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let model = Transformer::from_dir(&dir, family, expected.max_len).unwrap();
    for (text, ids) in expected.texts.iter().zip(&expected.ids) {
        assert_eq!(&model.token_ids(text), ids, "{name}: {text:?}");
    }
    let texts: Vec<&str> = expected.texts.iter().map(String::as_str).collect();
    let out = model.encode(&texts).unwrap();
    for (j, want) in expected.summary.iter().enumerate() {
        for (k, w) in want.iter().enumerate() {
            assert!((out[[j, k]] - w).abs() < 1e-10, "{name} row {j} col {k}: {} vs {w}", out[[j, k]]);
        }
    }
}

#[test]
fn bert_matches_reference() {
    check("tiny_bert", Family::Bert);
}

#[test]
fn electra_matches_reference() {
    check("tiny_electra", Family::Electra);
}

#[test]
fn albert_matches_reference() {
    check("tiny_albert", Family::Albert);
}

#[test]
fn load_encoder_checks_width_and_family() {
    let cfg = EncoderConfig {
        kind: EncoderKind::PretrainedSmallBert,
        embedding_dim: 8,
        max_sequence_length: 16,
        weights_path: Some(fixture("tiny_bert")),
        ..Default::default()
    };
    let enc = load_encoder(&cfg).unwrap();
    assert_eq!(enc.embedding_dim(), 8);
    assert_eq!(enc.encode(&["a", "b", "c"]).unwrap().dim(), (3, 8));

    let wide = EncoderConfig { embedding_dim: 128, ..cfg.clone() };
    assert!(matches!(load_encoder(&wide), Err(EncoderError::Config(_))));
    let wrong_family = EncoderConfig { kind: EncoderKind::PretrainedBaseAlbert, ..cfg };
    assert!(matches!(load_encoder(&wrong_family), Err(EncoderError::Format { .. })));
}

#[test]
fn missing_weights_are_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("tiny_bert/config.json"), dir.path().join("config.json")).unwrap();
    let err = Transformer::from_dir(dir.path(), Family::Bert, 16).unwrap_err();
    assert!(matches!(err, EncoderError::MissingArtifact { artifact: "model.safetensors", .. }));
    assert!(err.to_string().contains("model.safetensors"));
}
