//! Table→text examples, JSONL corpus I/O and table linearization.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::halscore::HallucinationTag;
use crate::tokenizer::{tokenize, TokenSeq};

/// Marker opening a table row in a linearized source.
pub const ROW_SEP: &str = "<row>";
/// Marker separating a field name from its value.
pub const COL_SEP: &str = "<col>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid field {field:?}: {message}")]
    Invalid {
        line: usize,
        field: &'static str,
        message: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinearizeError {
    #[error("token {position}: expected {expected}, found {found:?}")]
    Unexpected {
        position: usize,
        expected: &'static str,
        found: String,
    },
    #[error("row starting at token {position} has no {COL_SEP} marker")]
    MissingColSep { position: usize },
    #[error("row starting at token {position} has an empty field name")]
    EmptyField { position: usize },
    #[error("control tag found at token {position}; tags may only lead the sequence")]
    MisplacedTag { position: usize },
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct Cell {
    pub field: String,
    pub value: String,
}

impl From<(String, String)> for Cell {
    fn from((field, value): (String, String)) -> Self {
        Self { field, value }
    }
}

impl From<Cell> for (String, String) {
    fn from(c: Cell) -> Self {
        (c.field, c.value)
    }
}

/// The source side of an example: ordered `(field, value)` rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Table {
    pub rows: Vec<Cell>,
}

impl Table {
    pub fn new<I, F, V>(rows: I) -> Self
    where
        I: IntoIterator<Item = (F, V)>,
        F: Into<String>,
        V: Into<String>,
    {
        Self {
            rows: rows
                .into_iter()
                .map(|(f, v)| Cell {
                    field: f.into(),
                    value: v.into(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every field name must survive tokenization as at least one token.
    pub fn validate(&self) -> Result<(), String> {
        for (i, cell) in self.rows.iter().enumerate() {
            if tokenize(&cell.field).is_empty() {
                return Err(format!("row {i} has an empty field name"));
            }
        }
        Ok(())
    }

    /// The table with every field and value replaced by its space-joined
    /// tokenization. Linearization is lossless on normalized tables.
    pub fn normalized(&self) -> Table {
        Table {
            rows: self
                .rows
                .iter()
                .map(|c| Cell {
                    field: tokenize(&c.field).join(" "),
                    value: tokenize(&c.value).join(" "),
                })
                .collect(),
        }
    }

    /// All value tokens in row order.
    pub fn value_tokens(&self) -> TokenSeq {
        let mut out = TokenSeq::new();
        for cell in &self.rows {
            for t in tokenize(&cell.value) {
                out.push(t);
            }
        }
        out
    }

    /// All field-name tokens in row order.
    pub fn field_tokens(&self) -> TokenSeq {
        let mut out = TokenSeq::new();
        for cell in &self.rows {
            for t in tokenize(&cell.field) {
                out.push(t);
            }
        }
        out
    }
}

/// Per-token ground-truth label on synthetic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportLabel {
    Supported,
    Inferable,
    Unsupported,
}

impl SupportLabel {
    pub fn is_supported(self) -> bool {
        !matches!(self, SupportLabel::Unsupported)
    }
}

/// One source table and its target sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    #[serde(rename = "table")]
    pub source: Table,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<HallucinationTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hal_wo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hal_lm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_support: Option<Vec<bool>>,
    /// Three-way support labels; only written by the synthetic generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_labels: Option<Vec<SupportLabel>>,
}

impl Example {
    pub fn new(id: impl Into<String>, source: Table, target: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source,
            target: target.into(),
            tag: None,
            hal_wo: None,
            hal_lm: None,
            gold_support: None,
            support_labels: None,
        }
    }

    pub fn target_tokens(&self) -> TokenSeq {
        tokenize(&self.target)
    }

    pub fn linearize(&self) -> LinearizedSource {
        linearize(&self.source, self.tag)
    }

    /// Fraction of target tokens labeled unsupported, when gold labels exist.
    pub fn true_noise_fraction(&self) -> Option<f64> {
        let gold = self.gold_support.as_ref()?;
        if gold.is_empty() {
            return Some(0.0);
        }
        let bad = gold.iter().filter(|s| !**s).count();
        Some(bad as f64 / gold.len() as f64)
    }

    /// Checks the record-level invariants; `field` names the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.target.is_empty() {
            return Err(("target", "target is empty".into()));
        }
        self.source.validate().map_err(|m| ("table", m))?;
        for (name, score) in [("hal_wo", self.hal_wo), ("hal_lm", self.hal_lm)] {
            if let Some(s) = score {
                if !(0.0..=1.0).contains(&s) {
                    return Err((name, format!("score {s} outside [0,1]")));
                }
            }
        }
        let n_tokens = self.target_tokens().len();
        if let Some(gold) = &self.gold_support {
            if gold.len() != n_tokens {
                return Err((
                    "gold_support",
                    format!("{} labels for {} target tokens", gold.len(), n_tokens),
                ));
            }
        }
        if let Some(labels) = &self.support_labels {
            if labels.len() != n_tokens {
                return Err((
                    "support_labels",
                    format!("{} labels for {} target tokens", labels.len(), n_tokens),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawExample {
    id: Option<String>,
    table: Table,
    target: String,
    tag: Option<HallucinationTag>,
    hal_wo: Option<f64>,
    hal_lm: Option<f64>,
    gold_support: Option<Vec<bool>>,
    support_labels: Option<Vec<SupportLabel>>,
}

/// Parses JSONL text. Blank lines are skipped; ids default to the 1-based
/// line number.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let explicit = raw.id.is_some();
        let id = raw.id.unwrap_or_else(|| line_no.to_string());
        if !seen.insert(id.clone()) {
            if explicit {
                return Err(CorpusError::DuplicateId { line: line_no, id });
            }
            return Err(CorpusError::Invalid {
                line: line_no,
                field: "id",
                message: format!("auto-assigned id {id:?} collides with an explicit id"),
            });
        }
        let ex = Example {
            id,
            source: raw.table,
            target: raw.target,
            tag: raw.tag,
            hal_wo: raw.hal_wo,
            hal_lm: raw.hal_lm,
            gold_support: raw.gold_support,
            support_labels: raw.support_labels,
        };
        ex.validate()
            .map_err(|(field, message)| CorpusError::Invalid {
                line: line_no,
                field,
                message,
            })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Example>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(file))
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus(path: impl AsRef<Path>, examples: &[Example]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_jsonl(BufWriter::new(file), examples).map_err(io_err)
}

/// A table flattened into tokens, optionally led by a control tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedSource {
    pub tokens: Vec<String>,
}

impl LinearizedSource {
    pub fn tag(&self) -> Option<HallucinationTag> {
        self.tokens.first().and_then(|t| HallucinationTag::from_token(t))
    }

    /// Value tokens, in order, with markers, tags and field names removed.
    pub fn value_tokens(&self) -> Vec<&str> {
        self.select(false)
    }

    pub fn field_tokens(&self) -> Vec<&str> {
        self.select(true)
    }

    fn select(&self, fields: bool) -> Vec<&str> {
        let mut out = Vec::new();
        let mut in_value = false;
        for t in &self.tokens {
            match t.as_str() {
                ROW_SEP => in_value = false,
                COL_SEP => in_value = true,
                _ if HallucinationTag::from_token(t).is_some() => {}
                _ if in_value != fields => out.push(t.as_str()),
                _ => {}
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn linearize(source: &Table, tag: Option<HallucinationTag>) -> LinearizedSource {
    let mut tokens = Vec::new();
    if let Some(tag) = tag {
        tokens.push(tag.token().to_string());
    }
    for cell in &source.rows {
        tokens.push(ROW_SEP.to_string());
        tokens.extend(tokenize(&cell.field).into_inner());
        tokens.push(COL_SEP.to_string());
        tokens.extend(tokenize(&cell.value).into_inner());
    }
    LinearizedSource { tokens }
}

/// Rebuilds the normalized table from its linearization. Any leading tag is
/// ignored.
pub fn delinearize(source: &LinearizedSource) -> Result<Table, LinearizeError> {
    let toks = &source.tokens;
    let mut pos = 0;
    if toks.first().and_then(|t| HallucinationTag::from_token(t)).is_some() {
        pos = 1;
    }
    let mut rows = Vec::new();
    while pos < toks.len() {
        if toks[pos] != ROW_SEP {
            return Err(LinearizeError::Unexpected {
                position: pos,
                expected: ROW_SEP,
                found: toks[pos].clone(),
            });
        }
        let row_start = pos;
        pos += 1;
        let mut field = Vec::new();
        loop {
            match toks.get(pos).map(String::as_str) {
                None | Some(ROW_SEP) => {
                    return Err(LinearizeError::MissingColSep {
                        position: row_start,
                    })
                }
                Some(COL_SEP) => break,
                Some(t) if HallucinationTag::from_token(t).is_some() => {
                    return Err(LinearizeError::MisplacedTag { position: pos })
                }
                Some(t) => field.push(t),
            }
            pos += 1;
        }
        if field.is_empty() {
            return Err(LinearizeError::EmptyField {
                position: row_start,
            });
        }
        pos += 1;
        let mut value = Vec::new();
        while let Some(t) = toks.get(pos) {
            match t.as_str() {
                ROW_SEP => break,
                COL_SEP => {
                    return Err(LinearizeError::Unexpected {
                        position: pos,
                        expected: "value token",
                        found: t.clone(),
                    })
                }
                _ if HallucinationTag::from_token(t).is_some() => {
                    return Err(LinearizeError::MisplacedTag { position: pos })
                }
                _ => value.push(t.as_str()),
            }
            pos += 1;
        }
        rows.push(Cell {
            field: field.join(" "),
            value: value.join(" "),
        });
    }
    Ok(Table { rows })
}
