//! Thin adapters from the three source corpus layouts to [`Record`]s.
//!
//! Input layouts:
//!
//! * **IAC**: delimited text with a header. Required columns `id` and `text`;
//!   optional columns named after the eight forum tasks (`disagree_agree`,
//!   `emotion_fact`, ..., `questioning_asserting`) holding scores in [-5, 5].
//!   An empty cell means the post was not scored on that characteristic.
//! * **IBM**: delimited text with a header holding the argument text
//!   (`argument`) and its weighted-average quality score (`WA`) in [0, 1].
//!   An `id` column is used when configured, otherwise ids are `ibm-<row>`.
//! * **Propaganda**: one [`Article`] per news article: full text, technique
//!   spans in character offsets, and optional sentence boundaries (default:
//!   one sentence per non-blank line). [`load_propaganda_dir`] reads the
//!   `article<ID>.txt` + `article<ID>.labels.tsv` directory layout, where each
//!   label line is `<id>\t<technique>\t<start>\t<end>`.
//!
//! Malformed rows and spans are skipped and reported as [`Diagnostic`]s.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dichotomize_with, CorpusError, Diagnostic, Record, TieRule};
use crate::registry::{technique_index, Task, TaskType, NUM_TECHNIQUES};

/// Records produced by an adapter plus the rows it had to reject.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<Record>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Ingested {
    fn reject(&mut self, location: String, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic { location, message: message.into() });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IacFormat {
    pub delimiter: char,
    pub id_column: String,
    pub text_column: String,
    pub scale: (f64, f64),
    pub tie: TieRule,
}

impl Default for IacFormat {
    fn default() -> Self {
        IacFormat {
            delimiter: ',',
            id_column: "id".into(),
            text_column: "text".into(),
            scale: (-5.0, 5.0),
            tie: TieRule::Upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IbmFormat {
    pub delimiter: char,
    pub id_column: Option<String>,
    pub text_column: String,
    pub score_column: String,
    pub tie: TieRule,
}

impl Default for IbmFormat {
    fn default() -> Self {
        IbmFormat {
            delimiter: ',',
            id_column: None,
            text_column: "argument".into(),
            score_column: "WA".into(),
            tie: TieRule::Upper,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
}

fn reader<R: Read>(input: R, delimiter: char) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(true)
        .from_reader(input)
}

fn row_location(row: &csv::StringRecord, fallback: usize) -> String {
    let line = row.position().map(|p| p.line()).unwrap_or(fallback as u64);
    format!("line {line}")
}

/// Ingests forum posts: one record per post, each scored characteristic
/// dichotomized at the scale midpoint, unscored ones left out of the map.
pub fn ingest_iac<R: Read>(input: R, format: &IacFormat) -> Result<Ingested, CorpusError> {
    let mut rdr = reader(input, format.delimiter);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, &format.id_column)?;
    let text_col = column(&headers, &format.text_column)?;
    let task_cols: Vec<(Task, usize)> = Task::IAC
        .into_iter()
        .filter_map(|t| column(&headers, t.slug()).ok().map(|c| (t, c)))
        .collect();
    if task_cols.is_empty() {
        return Err(CorpusError::MissingColumn("any forum task score column".into()));
    }

    let mut out = Ingested::default();
    for (i, row) in rdr.records().enumerate() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                out.reject(format!("row {}", i + 1), e.to_string());
                continue;
            }
        };
        let loc = row_location(&row, i + 2);
        if row.len() != headers.len() {
            out.reject(loc, format!("expected {} fields, found {}", headers.len(), row.len()));
            continue;
        }
        let id = row[id_col].trim();
        let text = row[text_col].trim();
        if id.is_empty() || text.is_empty() {
            out.reject(loc, "missing id or text");
            continue;
        }
        let mut labels = BTreeMap::new();
        let mut bad = None;
        for &(task, col) in &task_cols {
            let cell = row[col].trim();
            if cell.is_empty() {
                continue;
            }
            let label = cell
                .parse::<f64>()
                .map_err(|e| format!("{}: {e}", task.slug()))
                .and_then(|score| {
                    dichotomize_with(score, format.scale.0, format.scale.1, format.tie)
                        .map_err(|e| format!("{}: {e}", task.slug()))
                });
            match label {
                Ok(label) => {
                    labels.insert(task, label);
                }
                Err(msg) => {
                    bad = Some(msg);
                    break;
                }
            }
        }
        if let Some(msg) = bad {
            out.reject(loc, msg);
            continue;
        }
        if labels.is_empty() {
            out.reject(loc, "no scored characteristics");
            continue;
        }
        out.records.push(Record {
            record_id: format!("iac-{id}"),
            text: text.to_string(),
            task_type: TaskType::Iac,
            labels,
            raw_technique_labels: None,
            split: None,
            augmented_from: None,
        });
    }
    Ok(out)
}

/// Ingests crowd-sourced arguments with a quality score in [0, 1].
pub fn ingest_ibm<R: Read>(input: R, format: &IbmFormat) -> Result<Ingested, CorpusError> {
    let mut rdr = reader(input, format.delimiter);
    let headers = rdr.headers()?.clone();
    let text_col = column(&headers, &format.text_column)?;
    let score_col = column(&headers, &format.score_column)?;
    let id_col = format.id_column.as_deref().map(|c| column(&headers, c)).transpose()?;

    let mut out = Ingested::default();
    for (i, row) in rdr.records().enumerate() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                out.reject(format!("row {}", i + 1), e.to_string());
                continue;
            }
        };
        let loc = row_location(&row, i + 2);
        if row.len() != headers.len() {
            out.reject(loc, format!("expected {} fields, found {}", headers.len(), row.len()));
            continue;
        }
        let text = row[text_col].trim();
        if text.is_empty() {
            out.reject(loc, "missing argument text");
            continue;
        }
        let id = match id_col {
            Some(c) if !row[c].trim().is_empty() => row[c].trim().to_string(),
            Some(_) => {
                out.reject(loc, "missing id");
                continue;
            }
            None => (i + 1).to_string(),
        };
        let label = row[score_col]
            .trim()
            .parse::<f64>()
            .map_err(|e| e.to_string())
            .and_then(|s| dichotomize_with(s, 0.0, 1.0, format.tie).map_err(|e| e.to_string()));
        let label = match label {
            Ok(l) => l,
            Err(msg) => {
                out.reject(loc, format!("quality score: {msg}"));
                continue;
            }
        };
        out.records.push(Record {
            record_id: format!("ibm-{id}"),
            text: text.to_string(),
            task_type: TaskType::IbmQuality,
            labels: BTreeMap::from([(Task::ArgumentQuality, label)]),
            raw_technique_labels: None,
            split: None,
            augmented_from: None,
        });
    }
    Ok(out)
}

/// A technique annotation over `[start, end)` in character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueSpan {
    pub technique: String,
    pub start: usize,
    pub end: usize,
}

/// A news article with technique spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub text: String,
    /// Sentence boundaries as `[start, end)` character offsets. `None` means
    /// one sentence per non-blank line.
    #[serde(default)]
    pub sentences: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub spans: Vec<TechniqueSpan>,
}

impl Article {
    fn line_sentences(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut pos = 0;
        for c in self.text.chars() {
            if c == '\n' {
                out.push((start, pos));
                start = pos + 1;
            }
            pos += 1;
        }
        out.push((start, pos));
        out
    }
}

/// Slice of `text` between two character offsets.
fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut idx = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = idx.nth(start).unwrap_or(text.len());
    let b1 = if end > start {
        idx.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b0
    };
    &text[b0..b1]
}

/// Ingests articles at sentence level: every sentence becomes a record,
/// including sentences with no technique. A technique is marked for a
/// sentence when its span overlaps the sentence; the propaganda label is the
/// max over the techniques.
pub fn ingest_propaganda(articles: &[Article]) -> Ingested {
    let mut out = Ingested::default();
    for article in articles {
        let n_chars = article.text.chars().count();
        let mut spans: Vec<(usize, usize, usize)> = Vec::new();
        for (i, span) in article.spans.iter().enumerate() {
            let loc = format!("article {} span {}", article.article_id, i + 1);
            let Some(tech) = technique_index(&span.technique) else {
                out.reject(loc, format!("unknown technique `{}`", span.technique));
                continue;
            };
            if span.start >= span.end || span.end > n_chars {
                out.reject(
                    loc,
                    format!("span [{}, {}) outside article of {n_chars} chars", span.start, span.end),
                );
                continue;
            }
            spans.push((tech, span.start, span.end));
        }

        let sentences = article.sentences.clone().unwrap_or_else(|| article.line_sentences());
        for (s_idx, &(start, end)) in sentences.iter().enumerate() {
            if start > end || end > n_chars {
                out.reject(
                    format!("article {} sentence {}", article.article_id, s_idx + 1),
                    "sentence boundary outside article",
                );
                continue;
            }
            let text = char_slice(&article.text, start, end).trim();
            if text.is_empty() {
                continue;
            }
            let mut raw = [0u8; NUM_TECHNIQUES];
            for &(tech, s, e) in &spans {
                if s < end && start < e {
                    raw[tech] = 1;
                }
            }
            let label = raw.iter().copied().max().unwrap_or(0);
            out.records.push(Record {
                record_id: format!("prop-{}-{}", article.article_id, s_idx + 1),
                text: text.to_string(),
                task_type: TaskType::Propaganda,
                labels: BTreeMap::from([(Task::Propaganda, label)]),
                raw_technique_labels: Some(raw),
                split: None,
                augmented_from: None,
            });
        }
    }
    out
}

/// Reads `article<ID>.txt` files and their `article<ID>.labels.tsv` (or
/// `article<ID>.task-flc-tc.labels`) annotation files from `dir`.
pub fn load_propaganda_dir(dir: &Path) -> Result<(Vec<Article>, Vec<Diagnostic>), CorpusError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();

    let mut articles = Vec::new();
    let mut diagnostics = Vec::new();
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let article_id = stem.strip_prefix("article").unwrap_or(&stem).to_string();
        let text = std::fs::read_to_string(&path)?;
        let mut spans = Vec::new();
        let candidates = [
            dir.join(format!("{stem}.labels.tsv")),
            dir.join(format!("{stem}.task-flc-tc.labels")),
        ];
        if let Some(label_path) = candidates.iter().find(|p| p.exists()) {
            let labels = std::fs::read_to_string(label_path)?;
            for (n, line) in labels.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                let parsed = match fields.as_slice() {
                    [_, technique, start, end] => start
                        .trim()
                        .parse::<usize>()
                        .and_then(|s| end.trim().parse::<usize>().map(|e| (s, e)))
                        .ok()
                        .map(|(start, end)| TechniqueSpan {
                            technique: technique.to_string(),
                            start,
                            end,
                        }),
                    _ => None,
                };
                match parsed {
                    Some(span) => spans.push(span),
                    None => diagnostics.push(Diagnostic {
                        location: format!("{}:{}", label_path.display(), n + 1),
                        message: "expected `<id>\\t<technique>\\t<start>\\t<end>`".into(),
                    }),
                }
            }
        }
        articles.push(Article { article_id, text, sentences: None, spans });
    }
    Ok((articles, diagnostics))
}
