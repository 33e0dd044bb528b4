//! WordPiece and Unigram tokenizers for the pretrained encoders.
//!
//! WordPiece follows the uncased BERT recipe (clean, split CJK, lowercase,
//! strip accents, split punctuation, greedy longest match with `##`
//! continuations). Unigram reads the `tokenizer.json` layout: a normalizer
//! chain, metaspace pre-tokenization and Viterbi segmentation over piece
//! log-probabilities.

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::EncoderError;

const CLS: &str = "[CLS]";
const SEP: &str = "[SEP]";
const UNK: &str = "[UNK]";

#[derive(Debug, Clone)]
pub enum Tokenizer {
    WordPiece(WordPiece),
    Unigram(Unigram),
}

impl Tokenizer {
    /// Prefers `tokenizer.json`, falls back to `vocab.txt` (WordPiece).
    pub fn from_dir(dir: &Path) -> Result<Self, EncoderError> {
        let json = dir.join("tokenizer.json");
        if json.exists() {
            return Self::from_tokenizer_json(&read(&json)?);
        }
        let vocab = dir.join("vocab.txt");
        if vocab.exists() {
            let lowercase = read_lowercase_flag(dir).unwrap_or(true);
            return WordPiece::from_vocab_txt(&read(&vocab)?, lowercase).map(Tokenizer::WordPiece);
        }
        Err(EncoderError::MissingArtifact { artifact: "tokenizer.json or vocab.txt", path: dir.to_path_buf() })
    }

    pub fn from_tokenizer_json(src: &str) -> Result<Self, EncoderError> {
        let v: Value = serde_json::from_str(src).map_err(|e| fmt_err(e.to_string()))?;
        let model = &v["model"];
        let added: HashMap<String, u32> = v["added_tokens"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|t| Some((t["content"].as_str()?.to_string(), t["id"].as_u64()? as u32)))
                    .collect()
            })
            .unwrap_or_default();
        match model["type"].as_str() {
            Some("WordPiece") => {
                let mut vocab: HashMap<String, u32> = model["vocab"]
                    .as_object()
                    .ok_or_else(|| fmt_err("WordPiece model without vocab"))?
                    .iter()
                    .filter_map(|(k, id)| Some((k.clone(), id.as_u64()? as u32)))
                    .collect();
                vocab.extend(added);
                let norm = &v["normalizer"];
                let lowercase = find_normalizer(norm, "BertNormalizer")
                    .map(|n| n["lowercase"].as_bool().unwrap_or(true))
                    .unwrap_or_else(|| find_normalizer(norm, "Lowercase").is_some());
                let strip_accents = find_normalizer(norm, "BertNormalizer")
                    .and_then(|n| n["strip_accents"].as_bool())
                    .unwrap_or(lowercase);
                let max_chars = model["max_input_chars_per_word"].as_u64().unwrap_or(100) as usize;
                WordPiece::new(vocab, lowercase, strip_accents, max_chars).map(Tokenizer::WordPiece)
            }
            Some("Unigram") => {
                let pieces: Vec<(String, f64)> = model["vocab"]
                    .as_array()
                    .ok_or_else(|| fmt_err("Unigram model without vocab"))?
                    .iter()
                    .map(|p| Some((p[0].as_str()?.to_string(), p[1].as_f64()?)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| fmt_err("Unigram vocab entries must be [piece, score]"))?;
                let unk_id = model["unk_id"].as_u64().map(|u| u as u32);
                let mut normalizers = Vec::new();
                collect_normalizers(&v["normalizer"], &mut normalizers)?;
                let (replacement, prefix) = metaspace(&v["pre_tokenizer"]);
                Unigram::new(pieces, unk_id, added, normalizers, replacement, prefix).map(Tokenizer::Unigram)
            }
            other => Err(fmt_err(format!("unsupported tokenizer model {other:?}"))),
        }
    }

    /// Token ids with `[CLS]` and `[SEP]`, at most `max_len` in total.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let (body, cls, sep) = match self {
            Tokenizer::WordPiece(t) => (t.tokenize_ids(text), t.cls, t.sep),
            Tokenizer::Unigram(t) => (t.tokenize_ids(text), t.cls, t.sep),
        };
        let keep = max_len.saturating_sub(2);
        let mut ids = Vec::with_capacity(body.len().min(keep) + 2);
        ids.push(cls);
        ids.extend(body.into_iter().take(keep));
        ids.push(sep);
        ids.truncate(max_len.max(1));
        ids
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::WordPiece(t) => t.vocab.values().map(|&i| i as usize + 1).max().unwrap_or(0),
            Tokenizer::Unigram(t) => t.pieces.len().max(t.extra_max),
        }
    }
}

fn read(path: &Path) -> Result<String, EncoderError> {
    std::fs::read_to_string(path).map_err(|source| EncoderError::Io { path: path.to_path_buf(), source })
}

fn fmt_err(reason: impl Into<String>) -> EncoderError {
    EncoderError::Format { artifact: "tokenizer".into(), reason: reason.into() }
}

fn read_lowercase_flag(dir: &Path) -> Option<bool> {
    let src = std::fs::read_to_string(dir.join("tokenizer_config.json")).ok()?;
    serde_json::from_str::<Value>(&src).ok()?["do_lower_case"].as_bool()
}

fn find_normalizer<'a>(n: &'a Value, ty: &str) -> Option<&'a Value> {
    if n["type"].as_str() == Some(ty) {
        return Some(n);
    }
    n["normalizers"].as_array()?.iter().find_map(|m| find_normalizer(m, ty))
}

fn metaspace(pre: &Value) -> (char, bool) {
    let node = if pre["type"].as_str() == Some("Metaspace") {
        Some(pre)
    } else {
        pre["pretokenizers"].as_array().and_then(|a| a.iter().find(|p| p["type"].as_str() == Some("Metaspace")))
    };
    match node {
        Some(m) => {
            let rep = m["replacement"].as_str().and_then(|s| s.chars().next()).unwrap_or('▁');
            let prefix = match m["prepend_scheme"].as_str() {
                Some(s) => s != "never",
                None => m["add_prefix_space"].as_bool().unwrap_or(true),
            };
            (rep, prefix)
        }
        None => ('▁', true),
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// ASCII punctuation and symbols, plus the common Unicode punctuation blocks.
fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(c as u32, 0x2000..=0x206F | 0x3000..=0x303F | 0xFF01..=0xFF0F | 0xFF1A..=0xFF20 | 0xFE30..=0xFE4F)
        || matches!(c, '¡' | '§' | '«' | '¶' | '·' | '»' | '¿')
}

fn strip_accents(s: &str) -> String {
    s.nfd().filter(|&c| !is_combining_mark(c)).collect()
}

#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: HashMap<String, u32>,
    lowercase: bool,
    strip_accents: bool,
    max_chars: usize,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl WordPiece {
    pub fn new(vocab: HashMap<String, u32>, lowercase: bool, strip_accents: bool, max_chars: usize) -> Result<Self, EncoderError> {
        let id = |t: &str| vocab.get(t).copied().ok_or_else(|| fmt_err(format!("vocabulary lacks {t}")));
        Ok(WordPiece { unk: id(UNK)?, cls: id(CLS)?, sep: id(SEP)?, vocab, lowercase, strip_accents, max_chars })
    }

    /// One token per line; the line number is the id.
    pub fn from_vocab_txt(src: &str, lowercase: bool) -> Result<Self, EncoderError> {
        let vocab = src.lines().enumerate().map(|(i, l)| (l.trim_end_matches('\r').to_string(), i as u32)).collect();
        Self::new(vocab, lowercase, lowercase, 100)
    }

    fn basic_tokens(&self, text: &str) -> Vec<String> {
        let mut cleaned = String::with_capacity(text.len());
        for c in text.chars() {
            if c == '\0' || c == '\u{FFFD}' || (c.is_control() && !c.is_whitespace()) {
                continue;
            }
            if c.is_whitespace() {
                cleaned.push(' ');
            } else if is_cjk(c) {
                cleaned.push(' ');
                cleaned.push(c);
                cleaned.push(' ');
            } else {
                cleaned.push(c);
            }
        }
        let mut out = Vec::new();
        for word in cleaned.split_whitespace() {
            let mut w = if self.lowercase { word.to_lowercase() } else { word.to_string() };
            if self.strip_accents {
                w = strip_accents(&w);
            }
            let mut cur = String::new();
            for c in w.chars() {
                if is_punctuation(c) {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(c.to_string());
                } else {
                    cur.push(c);
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }

    fn word_ids(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > self.max_chars {
            out.push(self.unk);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.vocab.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(self.unk);
                    return;
                }
            }
        }
    }

    pub fn tokenize_ids(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for w in self.basic_tokens(text) {
            self.word_ids(&w, &mut ids);
        }
        ids
    }
}

#[derive(Debug, Clone)]
enum Normalizer {
    Lowercase,
    Nfd,
    Nfkd,
    Nfc,
    Nfkc,
    StripAccents,
    Replace(String, String),
}

fn collect_normalizers(n: &Value, out: &mut Vec<Normalizer>) -> Result<(), EncoderError> {
    match n["type"].as_str() {
        None => {}
        Some("Sequence") => {
            for m in n["normalizers"].as_array().into_iter().flatten() {
                collect_normalizers(m, out)?;
            }
        }
        Some("Lowercase") => out.push(Normalizer::Lowercase),
        Some("NFD") => out.push(Normalizer::Nfd),
        Some("NFKD") => out.push(Normalizer::Nfkd),
        Some("NFC") => out.push(Normalizer::Nfc),
        Some("NFKC") => out.push(Normalizer::Nfkc),
        Some("StripAccents") => out.push(Normalizer::StripAccents),
        // A compiled character map; NFKC is its closest stand-in.
        Some("Precompiled") => out.push(Normalizer::Nfkc),
        Some("Replace") => {
            let pattern = n["pattern"]["String"]
                .as_str()
                .ok_or_else(|| fmt_err("only literal Replace patterns are supported"))?;
            out.push(Normalizer::Replace(pattern.into(), n["content"].as_str().unwrap_or("").into()));
        }
        Some(other) => return Err(fmt_err(format!("unsupported normalizer {other}"))),
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Unigram {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
    unk: u32,
    unk_score: f64,
    cls: u32,
    sep: u32,
    extra_max: usize,
    normalizers: Vec<Normalizer>,
    replacement: char,
    add_prefix: bool,
}

impl Unigram {
    fn new(
        pieces: Vec<(String, f64)>,
        unk_id: Option<u32>,
        added: HashMap<String, u32>,
        normalizers: Vec<Normalizer>,
        replacement: char,
        add_prefix: bool,
    ) -> Result<Self, EncoderError> {
        let index: HashMap<String, u32> = pieces.iter().enumerate().map(|(i, (p, _))| (p.clone(), i as u32)).collect();
        let special = |t: &str| {
            index.get(t).or_else(|| added.get(t)).copied().ok_or_else(|| fmt_err(format!("vocabulary lacks {t}")))
        };
        let unk = match unk_id {
            Some(u) => u,
            None => special("<unk>")?,
        };
        let min_score = pieces.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        Ok(Unigram {
            max_piece_chars: pieces.iter().map(|p| p.0.chars().count()).max().unwrap_or(1),
            cls: special(CLS)?,
            sep: special(SEP)?,
            extra_max: added.values().map(|&i| i as usize + 1).max().unwrap_or(0),
            unk,
            unk_score: min_score - 10.0,
            pieces,
            index,
            normalizers,
            replacement,
            add_prefix,
        })
    }

    fn normalize(&self, text: &str) -> String {
        let mut s = text.to_string();
        for n in &self.normalizers {
            s = match n {
                Normalizer::Lowercase => s.to_lowercase(),
                Normalizer::Nfd => s.nfd().collect(),
                Normalizer::Nfkd => s.nfkd().collect(),
                Normalizer::Nfc => s.nfc().collect(),
                Normalizer::Nfkc => s.nfkc().collect(),
                Normalizer::StripAccents => s.chars().filter(|&c| !is_combining_mark(c)).collect(),
                Normalizer::Replace(p, c) => s.replace(p.as_str(), c),
            };
        }
        s
    }

    /// Viterbi segmentation of one pre-token; consecutive unknown
    /// characters fuse into a single unknown piece.
    fn segment(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        let n = chars.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back: Vec<(usize, u32)> = vec![(0, 0); n + 1];
        best[0] = 0.0;
        for start in 0..n {
            if best[start] == f64::NEG_INFINITY {
                continue;
            }
            let mut any = false;
            let mut piece = String::new();
            for end in start + 1..=(start + self.max_piece_chars).min(n) {
                piece.push(chars[end - 1]);
                if let Some(&id) = self.index.get(&piece) {
                    any |= end == start + 1;
                    let score = best[start] + self.pieces[id as usize].1;
                    if score > best[end] {
                        best[end] = score;
                        back[end] = (start, id);
                    }
                }
            }
            if !any {
                let score = best[start] + self.unk_score;
                if score > best[start + 1] {
                    best[start + 1] = score;
                    back[start + 1] = (start, self.unk);
                }
            }
        }
        let mut ids = Vec::new();
        let mut end = n;
        while end > 0 {
            let (start, id) = back[end];
            if !(id == self.unk && ids.last() == Some(&self.unk)) {
                ids.push(id);
            }
            end = start;
        }
        ids.reverse();
        out.extend(ids);
    }

    pub fn tokenize_ids(&self, text: &str) -> Vec<u32> {
        let normalized = self.normalize(text);
        let mut ids = Vec::new();
        for w in normalized.split_whitespace() {
            let mut word = String::new();
            if self.add_prefix {
                word.push(self.replacement);
            }
            word.push_str(w);
            self.segment(&word, &mut ids);
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wordpiece() -> WordPiece {
        let vocab = "[PAD]\n[UNK]\n[CLS]\n[SEP]\nthe\nun\n##aff\n##able\nrun\n##ning\n,\n!\ncafe\n";
        WordPiece::from_vocab_txt(vocab, true).unwrap()
    }

    #[test]
    fn wordpiece_greedy_longest_match() {
        let t = Tokenizer::WordPiece(wordpiece());
        assert_eq!(t.encode("UnAffable, running!", 32), vec![2, 5, 6, 7, 10, 8, 9, 11, 3]);
        assert_eq!(t.encode("Café xyz", 32), vec![2, 12, 1, 3]);
    }

    #[test]
    fn truncation_keeps_special_tokens() {
        let t = Tokenizer::WordPiece(wordpiece());
        let ids = t.encode("the the the the the", 4);
        assert_eq!(ids, vec![2, 4, 4, 3]);
    }

    #[test]
    fn unigram_prefers_higher_scoring_segmentation() {
        let json = r#"{
            "normalizer": {"type": "Sequence", "normalizers": [{"type": "Lowercase"}]},
            "pre_tokenizer": {"type": "Metaspace", "replacement": "▁", "prepend_scheme": "always"},
            "added_tokens": [],
            "model": {"type": "Unigram", "unk_id": 1, "vocab": [
                ["<pad>", 0.0], ["<unk>", 0.0], ["[CLS]", 0.0], ["[SEP]", 0.0],
                ["▁", -2.0], ["▁ab", -1.0], ["c", -3.0], ["▁abc", -5.0], ["a", -4.0], ["b", -4.0]
            ]}
        }"#;
        let t = Tokenizer::from_tokenizer_json(json).unwrap();
        // ▁ab + c scores -4, ▁abc -5.
        assert_eq!(t.encode("ABC", 16), vec![2, 5, 6, 3]);
        // Unknown characters fuse into one <unk>.
        assert_eq!(t.encode("ab zz", 16), vec![2, 5, 4, 1, 3]);
    }
}
