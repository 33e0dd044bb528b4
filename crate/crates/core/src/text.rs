//! Whitespace-and-punctuation tokenization shared by augmentation, the
//! hashed bag-of-words encoder and the naive Bayes baseline.

use std::ops::Range;

/// A token and its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub span: (usize, usize),
}

impl Token<'_> {
    pub fn range(&self) -> Range<usize> {
        self.span.0..self.span.1
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Splits `text` into word tokens (runs of alphanumerics, `_` and `'`) and
/// single-character punctuation tokens. Whitespace separates tokens and is
/// never part of one.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(start) = word_start.take() {
            tokens.push(Token { text: &text[start..i], span: (start, i) });
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            tokens.push(Token { text: &text[i..end], span: (i, end) });
        }
    }
    if let Some(start) = word_start {
        tokens.push(Token { text: &text[start..], span: (start, text.len()) });
    }
    tokens
}

/// Lowercased token strings.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text.to_lowercase()).collect()
}

/// Number of tokens `tokenize` would produce.
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `std`'s
/// `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
