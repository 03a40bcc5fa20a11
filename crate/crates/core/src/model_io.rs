//! Versioned binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "HKNOBLM\0" | version u32 | kind u8 (0 n-gram, 1 copy-mixture)
//! order u32 | min_count u32 | k f64 × order
//! vocab: count u32, then (len u32, utf-8 bytes) per token
//! per order m = 1..=order: contexts u32, then sorted by context ids:
//!     ids u32 × (m - 1) | total u64 | entries u32 | (id u32, count u32) × entries
//! copy-mixture only: λ f64 | per-tag flag u8 [λ f64 × 5] | k_copy f64 | copy source u8
//! ```
//!
//! Floats are stored as raw bits so a loaded model reproduces every
//! distribution bit for bit.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::cond::{CopyMixtureModel, CopySource, CopyWeights};
use crate::halscore::NUM_TAGS;
use crate::ngram::{ContextCounts, NgramConfig, NgramModel, Vocab, EOS, UNK};

pub const MAGIC: &[u8; 8] = b"HKNOBLM\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_NGRAM: u8 = 0;
const KIND_COND: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("model format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("expected a {expected} model, found a {found} model")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

fn kind_name(kind: u8) -> &'static str {
    match kind {
        KIND_NGRAM => "n-gram",
        KIND_COND => "copy-mixture",
        _ => "unknown",
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("table larger than u32::MAX entries"));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        let end = self.pos.checked_add(n).ok_or(ModelIoError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(ModelIoError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ModelIoError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ModelIoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ModelIoError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn write_ngram(w: &mut Writer, m: &NgramModel) {
    w.u32(m.config.order as u32);
    w.u32(m.config.min_count);
    for &k in &m.config.k {
        w.f64(k);
    }
    let tokens = m.vocab.tokens();
    w.len(tokens.len());
    for t in tokens {
        w.len(t.len());
        w.0.extend_from_slice(t.as_bytes());
    }
    for table in &m.tables {
        let mut keys: Vec<&Vec<u32>> = table.keys().collect();
        keys.sort();
        w.len(keys.len());
        for key in keys {
            let c = &table[key];
            for &id in key {
                w.u32(id);
            }
            w.u64(c.total);
            w.len(c.next.len());
            for &(id, n) in &c.next {
                w.u32(id);
                w.u32(n);
            }
        }
    }
}

fn read_ngram(r: &mut Reader) -> Result<NgramModel, ModelIoError> {
    let order = r.u32()? as usize;
    let min_count = r.u32()?;
    if order == 0 || order > 16 {
        return Err(ModelIoError::Corrupt(format!("order {order}")));
    }
    let k = (0..order).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let config = NgramConfig { order, k, min_count };
    config
        .validate()
        .map_err(|e| ModelIoError::Corrupt(e.to_string()))?;

    let n_vocab = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(n_vocab.min(1 << 20));
    for _ in 0..n_vocab {
        let len = r.u32()? as usize;
        let bytes = r.take(len)?;
        let s = std::str::from_utf8(bytes).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
        tokens.push(s.to_string());
    }
    if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != EOS {
        return Err(ModelIoError::Corrupt("vocabulary must start with <unk>, </s>".into()));
    }
    let vocab = Vocab::from_words(tokens.into_iter().skip(2));
    let v = vocab.len() as u32;

    let mut tables = Vec::with_capacity(order);
    for m in 1..=order {
        let n_ctx = r.u32()? as usize;
        let mut table = HashMap::with_capacity(n_ctx.min(1 << 20));
        for _ in 0..n_ctx {
            let ctx = (0..m - 1).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let total = r.u64()?;
            let n_next = r.u32()? as usize;
            let mut next = Vec::with_capacity(n_next.min(1 << 20));
            for _ in 0..n_next {
                let id = r.u32()?;
                if id >= v {
                    return Err(ModelIoError::Corrupt(format!("token id {id} outside vocabulary")));
                }
                next.push((id, r.u32()?));
            }
            table.insert(ctx, ContextCounts { total, next });
        }
        tables.push(table);
    }
    Ok(NgramModel {
        config,
        vocab,
        tables,
    })
}

fn header(w: &mut Writer, kind: u8) {
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(kind);
}

fn read_header(r: &mut Reader) -> Result<u8, ModelIoError> {
    let magic = r.take(MAGIC.len()).map_err(|_| ModelIoError::BadMagic)?;
    if magic != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    r.u8()
}

fn expect_kind(found: u8, expected: u8) -> Result<(), ModelIoError> {
    if found == expected {
        Ok(())
    } else if found > KIND_COND {
        Err(ModelIoError::Corrupt(format!("unknown model kind {found}")))
    } else {
        Err(ModelIoError::WrongKind {
            expected: kind_name(expected),
            found: kind_name(found),
        })
    }
}

fn finish(r: &Reader) -> Result<(), ModelIoError> {
    if r.pos == r.buf.len() {
        Ok(())
    } else {
        Err(ModelIoError::Corrupt(format!(
            "{} trailing bytes",
            r.buf.len() - r.pos
        )))
    }
}

pub fn ngram_to_bytes(model: &NgramModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    header(&mut w, KIND_NGRAM);
    write_ngram(&mut w, model);
    w.0
}

pub fn ngram_from_bytes(bytes: &[u8]) -> Result<NgramModel, ModelIoError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    expect_kind(read_header(&mut r)?, KIND_NGRAM)?;
    let m = read_ngram(&mut r)?;
    finish(&r)?;
    Ok(m)
}

pub fn cond_to_bytes(model: &CopyMixtureModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    header(&mut w, KIND_COND);
    write_ngram(&mut w, &model.base);
    w.f64(model.weights.global);
    match model.weights.per_tag {
        Some(map) => {
            w.u8(1);
            for l in map {
                w.f64(l);
            }
        }
        None => w.u8(0),
    }
    w.f64(model.k_copy);
    w.u8(match model.copy_source {
        CopySource::Values => 0,
        CopySource::ValuesAndFields => 1,
    });
    w.0
}

pub fn cond_from_bytes(bytes: &[u8]) -> Result<CopyMixtureModel, ModelIoError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    expect_kind(read_header(&mut r)?, KIND_COND)?;
    let base = read_ngram(&mut r)?;
    let global = r.f64()?;
    let per_tag = match r.u8()? {
        0 => None,
        1 => {
            let mut map = [0.0; NUM_TAGS];
            for l in map.iter_mut() {
                *l = r.f64()?;
            }
            Some(map)
        }
        f => return Err(ModelIoError::Corrupt(format!("per-tag flag {f}"))),
    };
    let k_copy = r.f64()?;
    let copy_source = match r.u8()? {
        0 => CopySource::Values,
        1 => CopySource::ValuesAndFields,
        s => return Err(ModelIoError::Corrupt(format!("copy source {s}"))),
    };
    finish(&r)?;
    let corrupt = |e: crate::cond::CondError| ModelIoError::Corrupt(e.to_string());
    CopyMixtureModel::new(base, global)
        .and_then(|m| m.with_k_copy(k_copy))
        .and_then(|m| m.with_weights(CopyWeights { global, per_tag }))
        .map(|m| m.with_copy_source(copy_source))
        .map_err(corrupt)
}

pub fn save_ngram(model: &NgramModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    Ok(std::fs::write(path, ngram_to_bytes(model))?)
}

pub fn load_ngram(path: impl AsRef<Path>) -> Result<NgramModel, ModelIoError> {
    ngram_from_bytes(&std::fs::read(path)?)
}

pub fn save_cond(model: &CopyMixtureModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    Ok(std::fs::write(path, cond_to_bytes(model))?)
}

pub fn load_cond(path: impl AsRef<Path>) -> Result<CopyMixtureModel, ModelIoError> {
    cond_from_bytes(&std::fs::read(path)?)
}
