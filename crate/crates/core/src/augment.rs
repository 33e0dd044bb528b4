//! Training-set augmentation: back-translation, contextual (masked-word)
//! substitution, synonym substitution and random cropping.
//!
//! Translation and masked-word prediction are supplied through the
//! [`Translator`] and [`MaskedPredictor`] traits. The crate ships identity and
//! echo implementations for offline runs, a bundled [`SynonymTable`], and a
//! [`CommandProvider`] that wires any external program in over stdin/stdout:
//!
//! * translation: the text is written to stdin, with `ARGMINE_SOURCE_LANG`
//!   and `ARGMINE_TARGET_LANG` set in the environment; stdout (trimmed) is the
//!   translation. A non-zero exit status is a provider failure.
//! * masked prediction: the tokens are written to stdin separated by single
//!   spaces with the target position replaced by `[MASK]`, and
//!   `ARGMINE_MASK_INDEX` set; the first whitespace-delimited word on stdout
//!   is the prediction. Failures fall back to the original token.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::process::{Command, Stdio};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Diagnostic, Record, Split};
use crate::seed;
use crate::text::{tokenize, Token};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("record {0} is not in the TRAIN split")]
    NotTrain(String),
    #[error("substitution rate must be in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("record {record_id}: {reason}")]
    Skipped { record_id: String, reason: String },
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Augmentation procedures, in the order their copies are emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Backtranslate,
    Contextual,
    Synonym,
    Crop,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Backtranslate, Method::Contextual, Method::Synonym, Method::Crop];

    fn suffix(self) -> &'static str {
        match self {
            Method::Backtranslate => "bt",
            Method::Contextual => "ctx",
            Method::Synonym => "syn",
            Method::Crop => "crop",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmenterConfig {
    pub substitution_rate: f64,
    pub source_language: String,
    pub backtranslation_target: String,
    pub seed: u64,
    pub enabled: BTreeSet<Method>,
}

impl Default for AugmenterConfig {
    fn default() -> Self {
        AugmenterConfig {
            substitution_rate: 0.30,
            source_language: "en".into(),
            backtranslation_target: "de".into(),
            seed: 0,
            enabled: Method::ALL.into_iter().collect(),
        }
    }
}

impl AugmenterConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.substitution_rate > 0.0 && self.substitution_rate < 1.0) {
            return Err(AugmentError::InvalidRate(self.substitution_rate));
        }
        Ok(())
    }

    /// Number of positions touched in a text of `n` tokens: floor(rate * n).
    pub fn positions_for(&self, n: usize) -> usize {
        (self.substitution_rate * n as f64).floor() as usize
    }
}

pub trait Translator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError>;
}

/// Predicts the token at `index` from its context. Must return one token.
pub trait MaskedPredictor {
    fn predict(&self, tokens: &[&str], index: usize) -> String;
}

pub trait SynonymProvider {
    fn synonym(&self, token: &str) -> Option<String>;
}

/// Returns the text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, ProviderError> {
        Ok(text.to_string())
    }
}

/// Returns the token already at the masked position.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoPredictor;

impl MaskedPredictor for EchoPredictor {
    fn predict(&self, tokens: &[&str], index: usize) -> String {
        tokens[index].to_string()
    }
}

/// Lowercase token to synonym lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    entries: HashMap<String, String>,
}

impl SynonymTable {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        SynonymTable {
            entries: pairs.into_iter().map(|(k, v)| (k.into().to_lowercase(), v.into())).collect(),
        }
    }

    /// Parses `token<TAB>synonym` lines; `#` starts a comment line.
    pub fn from_tsv<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('\t') {
                entries.insert(k.trim().to_lowercase(), v.trim().to_string());
            }
        }
        Ok(SynonymTable { entries })
    }

    /// The small general-English table bundled with the crate.
    pub fn bundled() -> Self {
        Self::from_tsv(include_str!("../data/synonyms.tsv").as_bytes()).expect("bundled table parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl SynonymProvider for SynonymTable {
    fn synonym(&self, token: &str) -> Option<String> {
        let syn = self.entries.get(&token.to_lowercase())?;
        let capitalized = token.chars().next().is_some_and(char::is_uppercase);
        Some(if capitalized {
            let mut c = syn.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        } else {
            syn.clone()
        })
    }
}

/// Runs an external program per request (see the module docs for the
/// protocol).
#[derive(Debug, Clone)]
pub struct CommandProvider {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandProvider {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandProvider { program: program.into(), args }
    }

    /// Splits a command line on whitespace, e.g. from an environment variable.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(String::from);
        let program = parts.next()?;
        Some(CommandProvider { program, args: parts.collect() })
    }

    fn run(&self, input: &str, env: &[(&str, String)]) -> Result<String, ProviderError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .envs(env.iter().map(|(k, v)| (*k, v.as_str())))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ProviderError(format!("spawn {}: {e}", self.program)))?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(input.as_bytes())
            .map_err(|e| ProviderError(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| ProviderError(e.to_string()))?;
        if !out.status.success() {
            return Err(ProviderError(format!("{} exited with {}", self.program, out.status)));
        }
        String::from_utf8(out.stdout).map_err(|e| ProviderError(e.to_string()))
    }
}

impl Translator for CommandProvider {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        let env = [("ARGMINE_SOURCE_LANG", source.to_string()), ("ARGMINE_TARGET_LANG", target.to_string())];
        let out = self.run(text, &env)?;
        let out = out.trim();
        if out.is_empty() {
            return Err(ProviderError("empty translation".into()));
        }
        Ok(out.to_string())
    }
}

impl MaskedPredictor for CommandProvider {
    fn predict(&self, tokens: &[&str], index: usize) -> String {
        let masked: Vec<&str> =
            tokens.iter().enumerate().map(|(i, t)| if i == index { "[MASK]" } else { t }).collect();
        self.run(&masked.join(" "), &[("ARGMINE_MASK_INDEX", index.to_string())])
            .ok()
            .and_then(|s| s.split_whitespace().next().map(String::from))
            .unwrap_or_else(|| tokens[index].to_string())
    }
}

/// The three providers used by [`augment_corpus`].
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub translator: &'a dyn Translator,
    pub predictor: &'a dyn MaskedPredictor,
    pub synonyms: &'a dyn SynonymProvider,
}

fn derived(record: &Record, method: Method, text: String) -> Record {
    Record {
        record_id: format!("{}~{}", record.record_id, method.suffix()),
        text,
        augmented_from: Some(record.record_id.clone()),
        split: Some(Split::Train),
        ..record.clone()
    }
}

fn record_rng(config: &AugmenterConfig, method: Method, record: &Record) -> rand_chacha::ChaCha8Rng {
    seed::rng(config.seed, &format!("augment/{}/{}", method.suffix(), record.record_id))
}

fn skipped(record: &Record, reason: impl Into<String>) -> AugmentError {
    AugmentError::Skipped { record_id: record.record_id.clone(), reason: reason.into() }
}

/// Sorted positions chosen for substitution or deletion.
fn choose_positions<R: Rng>(rng: &mut R, n_tokens: usize, k: usize) -> Vec<usize> {
    let mut idx = sample(rng, n_tokens, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Rebuilds `text` with the token spans at `positions` replaced.
fn splice(text: &str, tokens: &[Token<'_>], replacements: &[(usize, String)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (pos, rep) in replacements {
        let (s, e) = tokens[*pos].span;
        out.push_str(&text[cursor..s]);
        out.push_str(rep);
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Round-trips the text through the target language.
pub fn back_translate(
    record: &Record,
    translator: &dyn Translator,
    config: &AugmenterConfig,
) -> Result<Record, AugmentError> {
    let (src, tgt) = (&config.source_language, &config.backtranslation_target);
    let forward = translator.translate(&record.text, src, tgt).map_err(|e| skipped(record, e.to_string()))?;
    let back = translator.translate(&forward, tgt, src).map_err(|e| skipped(record, e.to_string()))?;
    if back.trim().is_empty() {
        return Err(skipped(record, "empty back-translation"));
    }
    Ok(derived(record, Method::Backtranslate, back))
}

/// Replaces floor(rate * n) randomly chosen tokens with the predictor's
/// output for that position.
pub fn contextual_substitute(
    record: &Record,
    predictor: &dyn MaskedPredictor,
    config: &AugmenterConfig,
) -> Result<Record, AugmentError> {
    let tokens = tokenize(&record.text);
    if tokens.is_empty() {
        return Err(skipped(record, "no tokens"));
    }
    let words: Vec<&str> = tokens.iter().map(|t| t.text).collect();
    let mut rng = record_rng(config, Method::Contextual, record);
    let positions = choose_positions(&mut rng, tokens.len(), config.positions_for(tokens.len()));
    let replacements: Vec<(usize, String)> = positions
        .into_iter()
        .map(|p| (p, predictor.predict(&words, p)))
        .map(|(p, w)| {
            // A prediction must stay a single token for the count to hold.
            let single = tokenize(&w).len() == 1;
            (p, if single { w } else { words[p].to_string() })
        })
        .collect();
    Ok(derived(record, Method::Contextual, splice(&record.text, &tokens, &replacements)))
}

/// Replaces floor(rate * n) randomly chosen tokens with their synonym.
/// Chosen positions without a synonym keep their token.
pub fn synonym_substitute(
    record: &Record,
    synonyms: &dyn SynonymProvider,
    config: &AugmenterConfig,
) -> Result<Record, AugmentError> {
    let tokens = tokenize(&record.text);
    if tokens.is_empty() {
        return Err(skipped(record, "no tokens"));
    }
    let mut rng = record_rng(config, Method::Synonym, record);
    let positions = choose_positions(&mut rng, tokens.len(), config.positions_for(tokens.len()));
    let replacements: Vec<(usize, String)> = positions
        .into_iter()
        .filter_map(|p| {
            synonyms
                .synonym(tokens[p].text)
                .filter(|s| tokenize(s).len() == 1)
                .map(|s| (p, s))
        })
        .collect();
    Ok(derived(record, Method::Synonym, splice(&record.text, &tokens, &replacements)))
}

/// Tokens left after deleting the sorted `deleted` positions, joined by
/// single spaces.
pub fn crop_tokens(tokens: &[&str], deleted: &[usize]) -> String {
    let mut out = Vec::with_capacity(tokens.len());
    let mut d = deleted.iter().peekable();
    for (i, t) in tokens.iter().enumerate() {
        if d.peek() == Some(&&i) {
            d.next();
        } else {
            out.push(*t);
        }
    }
    out.join(" ")
}

/// Deletes floor(rate * n) randomly chosen tokens, keeping the order of the
/// rest.
pub fn random_crop(record: &Record, config: &AugmenterConfig) -> Result<Record, AugmentError> {
    let tokens = tokenize(&record.text);
    if tokens.len() < 2 {
        return Err(skipped(record, "fewer than 2 tokens"));
    }
    let k = config.positions_for(tokens.len());
    if k >= tokens.len() {
        return Err(skipped(record, "cropping would empty the text"));
    }
    let mut rng = record_rng(config, Method::Crop, record);
    let deleted = choose_positions(&mut rng, tokens.len(), k);
    let words: Vec<&str> = tokens.iter().map(|t| t.text).collect();
    Ok(derived(record, Method::Crop, crop_tokens(&words, &deleted)))
}

/// Augmented training set plus the records each method had to skip.
#[derive(Debug, Clone, Default)]
pub struct Augmented {
    pub records: Vec<Record>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Originals followed by one copy per enabled method per record. Every input
/// record must be in TRAIN.
pub fn augment_corpus(
    records: &[Record],
    providers: Providers<'_>,
    config: &AugmenterConfig,
) -> Result<Augmented, AugmentError> {
    config.validate()?;
    if let Some(r) = records.iter().find(|r| r.split != Some(Split::Train)) {
        return Err(AugmentError::NotTrain(r.record_id.clone()));
    }
    let mut out = Augmented { records: records.to_vec(), diagnostics: Vec::new() };
    for record in records {
        for &method in &config.enabled {
            let result = match method {
                Method::Backtranslate => back_translate(record, providers.translator, config),
                Method::Contextual => contextual_substitute(record, providers.predictor, config),
                Method::Synonym => synonym_substitute(record, providers.synonyms, config),
                Method::Crop => random_crop(record, config),
            };
            match result {
                Ok(r) => out.records.push(r),
                Err(e) => out.diagnostics.push(Diagnostic {
                    location: format!("{} ({method})", record.record_id),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split, synthesize, SplitRatios};
    use crate::registry::{Task, TaskType};
    use crate::text::token_count;
    use std::collections::BTreeMap;

    fn rec(text: &str) -> Record {
        Record {
            record_id: "r1".into(),
            text: text.into(),
            task_type: TaskType::IbmQuality,
            labels: BTreeMap::from([(Task::ArgumentQuality, 1)]),
            raw_technique_labels: None,
            split: Some(Split::Train),
            augmented_from: None,
        }
    }

    struct CaseFlip;
    impl Translator for CaseFlip {
        fn translate(&self, text: &str, _: &str, target: &str) -> Result<String, ProviderError> {
            Ok(if target == "de" { text.to_uppercase() } else { text.to_lowercase() })
        }
    }

    struct Failing;
    impl Translator for Failing {
        fn translate(&self, _: &str, _: &str, _: &str) -> Result<String, ProviderError> {
            Err(ProviderError("offline".into()))
        }
    }

    struct Constant(&'static str);
    impl MaskedPredictor for Constant {
        fn predict(&self, _: &[&str], _: usize) -> String {
            self.0.to_string()
        }
    }

    const TEN: &str = "one two three four five six seven eight nine ten";

    #[test]
    fn back_translation() {
        let cfg = AugmenterConfig::default();
        let r = rec("some text here");
        let out = back_translate(&r, &IdentityTranslator, &cfg).unwrap();
        assert_eq!(out.text, r.text);
        assert_eq!(out.augmented_from.as_deref(), Some("r1"));
        assert_eq!(out.labels, r.labels);
        assert_eq!(back_translate(&r, &CaseFlip, &cfg).unwrap().text, "some text here");
        assert!(matches!(back_translate(&r, &Failing, &cfg), Err(AugmentError::Skipped { .. })));
    }

    #[test]
    fn contextual_counts() {
        let cfg = AugmenterConfig::default();
        let out = contextual_substitute(&rec(TEN), &Constant("zzz"), &cfg).unwrap();
        assert_eq!(out.text.matches("zzz").count(), 3);
        assert_eq!(token_count(&out.text), 10);

        let short = contextual_substitute(&rec("two words"), &Constant("zzz"), &cfg).unwrap();
        assert_eq!(short.text, "two words");

        let r = rec("Keep, the punctuation; exactly as-is!");
        assert_eq!(contextual_substitute(&r, &EchoPredictor, &cfg).unwrap().text, r.text);
    }

    #[test]
    fn multi_token_predictions_are_refused() {
        let out = contextual_substitute(&rec(TEN), &Constant("two words"), &AugmenterConfig::default()).unwrap();
        assert_eq!(out.text, TEN);
    }

    #[test]
    fn synonym_counts() {
        let cfg = AugmenterConfig::default();
        let r = rec(&["good"; 10].join(" "));
        assert_eq!(synonym_substitute(&r, &SynonymTable::default(), &cfg).unwrap().text, r.text);
        let table = SynonymTable::new([("good", "fine")]);
        let out = synonym_substitute(&r, &table, &cfg).unwrap();
        assert_eq!(out.text.matches("fine").count(), 3);
        assert_eq!(token_count(&out.text), 10);
    }

    #[test]
    fn synonym_keeps_capitalization() {
        let table = SynonymTable::new([("good", "fine")]);
        assert_eq!(table.synonym("Good").as_deref(), Some("Fine"));
        assert_eq!(table.synonym("nope"), None);
        assert!(SynonymTable::bundled().len() > 50);
    }

    #[test]
    fn crop_counts_and_order() {
        let cfg = AugmenterConfig::default();
        let out = random_crop(&rec(TEN), &cfg).unwrap();
        assert_eq!(token_count(&out.text), 7);
        assert_eq!(crop_tokens(&["a", "b", "c"], &[1]), "a c");
        assert!(matches!(random_crop(&rec("solo"), &cfg), Err(AugmentError::Skipped { .. })));
    }

    #[test]
    fn crop_deletes_the_drawn_index() {
        let cfg = AugmenterConfig { substitution_rate: 0.34, seed: 0, ..Default::default() };
        let r = rec("a b c");
        let mut rng = record_rng(&cfg, Method::Crop, &r);
        let drawn = choose_positions(&mut rng, 3, 1);
        let expected = crop_tokens(&["a", "b", "c"], &drawn);
        assert_eq!(random_crop(&r, &cfg).unwrap().text, expected);
    }

    #[test]
    fn corpus_growth_and_precondition() {
        let recs = split(synthesize(60, 1.0, 1), SplitRatios::default(), 0).unwrap();
        let train: Vec<Record> = recs.iter().filter(|r| r.split == Some(Split::Train)).cloned().collect();
        let providers = Providers {
            translator: &IdentityTranslator,
            predictor: &EchoPredictor,
            synonyms: &SynonymTable::bundled(),
        };
        let all = augment_corpus(&train[..100], providers, &AugmenterConfig::default()).unwrap();
        assert_eq!(all.records.len(), 500);
        assert!(all.diagnostics.is_empty());

        let none = AugmenterConfig { enabled: BTreeSet::new(), ..Default::default() };
        assert_eq!(augment_corpus(&train, providers, &none).unwrap().records, train);

        assert!(matches!(
            augment_corpus(&recs, providers, &AugmenterConfig::default()),
            Err(AugmentError::NotTrain(_))
        ));
    }

    #[test]
    fn rate_must_be_a_proportion() {
        let cfg = AugmenterConfig { substitution_rate: 1.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(AugmentError::InvalidRate(_))));
    }

    #[cfg(unix)]
    #[test]
    fn command_provider_protocol() {
        let upper = CommandProvider::new("tr", vec!["a-z".into(), "A-Z".into()]);
        assert_eq!(upper.translate("hello", "en", "de").unwrap(), "HELLO");
        let first = CommandProvider::from_command_line("cut -d] -f2").unwrap();
        assert_eq!(first.predict(&["x", "y"], 0), "y");
        let missing = CommandProvider::new("/nonexistent/binary", vec![]);
        assert!(missing.translate("x", "en", "de").is_err());
        assert_eq!(missing.predict(&["keep"], 0), "keep");
    }
}
