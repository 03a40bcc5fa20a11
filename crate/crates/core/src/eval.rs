//! Automatic metrics: corpus BLEU-4, a simplified table-entailment
//! precision/recall, cell coverage, unsupported-token rate and length.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Example, Table};
use crate::tokenizer::{is_punctuation, tokenize, word_set, TokenSeq};

/// Tokens that never count as content.
pub const FUNCTION_WORDS: [&str; 25] = [
    "a", "an", "the", "is", "was", "are", "were", "be", "been", "being", "of", "in", "on", "at",
    "to", "for", "with", "by", "from", "and", "or", "as", "that", "it", "its",
];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("nothing to evaluate")]
    Empty,
}

pub fn is_content(token: &str) -> bool {
    !is_punctuation(token) && !FUNCTION_WORDS.contains(&token)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_default() += 1;
        }
    }
    out
}

/// Clipped n-gram matches and the number of prediction n-grams.
pub fn clipped_matches(prediction: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let pred = ngram_counts(prediction, n);
    let refc = ngram_counts(reference, n);
    let matched = pred
        .iter()
        .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, prediction.len().saturating_sub(n - 1))
}

/// Corpus-level BLEU-4 with add-one smoothing on zero higher-order
/// precisions.
pub fn bleu4(predictions: &[TokenSeq], references: &[TokenSeq]) -> Result<f64, EvalError> {
    if predictions.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (p, r) in predictions.iter().zip(references) {
        for n in 1..=4 {
            let (m, t) = clipped_matches(p, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if n > 0 && matched[n] == 0 {
            1.0 / (total[n] as f64 + 1.0)
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
    }
    let c: usize = predictions.iter().map(|p| p.len()).sum();
    let r: usize = references.iter().map(|r| r.len()).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / 4.0).exp())
}

fn value_word_sets(source: &Table) -> Vec<BTreeSet<String>> {
    source
        .rows
        .iter()
        .map(|c| word_set(tokenize(&c.value).iter()))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Cells whose value words all appear in the prediction. Cells without
/// any value words never count.
pub fn coverage(prediction: &TokenSeq, source: &Table) -> usize {
    let pred = word_set(prediction.iter());
    value_word_sets(source)
        .iter()
        .filter(|cell| cell.is_subset(&pred))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailScore {
    pub precision: f64,
    pub recall: f64,
    /// The prediction had no content tokens, so precision is undefined and
    /// reported as 0.
    pub degenerate: bool,
}

/// Simplified entailment P/R. Precision is the share of prediction content
/// tokens found among the source values or the reference. Recall averages
/// the share of covered cells with the reference n-gram recall (n = 1..4,
/// over the orders the reference is long enough for).
pub fn entailment_pr(prediction: &TokenSeq, source: &Table, reference: &TokenSeq) -> EntailScore {
    let content: Vec<&String> = prediction.iter().filter(|t| is_content(t)).collect();
    let values = source.value_tokens();
    let support: BTreeSet<&str> = values
        .iter()
        .chain(reference.iter())
        .map(String::as_str)
        .collect();
    let (precision, degenerate) = if content.is_empty() {
        (0.0, true)
    } else {
        let ok = content.iter().filter(|t| support.contains(t.as_str())).count();
        (ok as f64 / content.len() as f64, false)
    };

    let cells = value_word_sets(source);
    let cell_recall = (!cells.is_empty()).then(|| coverage(prediction, source) as f64 / cells.len() as f64);
    let mut orders = Vec::new();
    for n in 1..=4 {
        if reference.len() >= n {
            let (m, t) = clipped_matches(reference, prediction, n);
            orders.push(m as f64 / t as f64);
        }
    }
    let ref_recall = (!orders.is_empty()).then(|| orders.iter().sum::<f64>() / orders.len() as f64);
    let recall = if prediction.is_empty() {
        0.0
    } else {
        match (cell_recall, ref_recall) {
            (Some(c), Some(r)) => 0.5 * c + 0.5 * r,
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => 0.0,
        }
    };
    EntailScore {
        precision,
        recall,
        degenerate,
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p <= 0.0 || r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Words an example's target is allowed to use: source values plus target
/// tokens with a supported or inferable gold label. `None` without labels.
pub fn gold_support_vocab(example: &Example) -> Option<BTreeSet<String>> {
    let tokens = example.target_tokens();
    let labels: Vec<bool> = match (&example.support_labels, &example.gold_support) {
        (Some(l), _) => l.iter().map(|l| l.is_supported()).collect(),
        (None, Some(g)) => g.clone(),
        (None, None) => return None,
    };
    let mut vocab: BTreeSet<String> = example.source.value_tokens().into_inner().into_iter().collect();
    vocab.extend(
        tokens
            .iter()
            .zip(labels)
            .filter(|(_, ok)| *ok)
            .map(|(t, _)| t.clone()),
    );
    Some(vocab)
}

/// Unsupported and total content-token counts of a prediction.
pub fn unsupported_counts(
    prediction: &TokenSeq,
    source: &Table,
    gold_vocab: Option<&BTreeSet<String>>,
) -> (usize, usize) {
    let values: BTreeSet<String>;
    let vocab = match gold_vocab {
        Some(v) => v,
        None => {
            values = source.value_tokens().into_inner().into_iter().collect();
            &values
        }
    };
    let content: Vec<&String> = prediction.iter().filter(|t| is_content(t)).collect();
    let bad = content.iter().filter(|t| !vocab.contains(t.as_str())).count();
    (bad, content.len())
}

/// Share of content tokens not supported by the source (or by the gold
/// support vocabulary when given). 0 when there are no content tokens.
pub fn unsupported_rate(
    prediction: &TokenSeq,
    source: &Table,
    gold_vocab: Option<&BTreeSet<String>>,
) -> f64 {
    let (bad, total) = unsupported_counts(prediction, source, gold_vocab);
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub entail_precision: f64,
    pub entail_recall: f64,
    pub entail_f1: f64,
    pub coverage_mean: f64,
    pub unsupported_rate: f64,
    pub mean_len: f64,
    pub n: usize,
}

/// Scores predictions against the examples they were generated for. The
/// unsupported rate pools content tokens over the whole set and uses gold
/// support labels where an example has them.
pub fn evaluate_detailed(
    predictions: &[TokenSeq],
    examples: &[Example],
) -> Result<(EvalReport, Vec<EntailScore>), EvalError> {
    let references: Vec<TokenSeq> = examples.iter().map(Example::target_tokens).collect();
    let bleu = bleu4(predictions, &references)?;
    let n = predictions.len();
    let mut entail = Vec::with_capacity(n);
    let (mut cov, mut len) = (0usize, 0usize);
    let (mut bad, mut content) = (0usize, 0usize);
    for ((p, e), r) in predictions.iter().zip(examples).zip(&references) {
        entail.push(entailment_pr(p, &e.source, r));
        cov += coverage(p, &e.source);
        len += p.len();
        let gold = gold_support_vocab(e);
        let (b, c) = unsupported_counts(p, &e.source, gold.as_ref());
        bad += b;
        content += c;
    }
    let precision = entail.iter().map(|s| s.precision).sum::<f64>() / n as f64;
    let recall = entail.iter().map(|s| s.recall).sum::<f64>() / n as f64;
    let report = EvalReport {
        bleu4: bleu,
        entail_precision: precision,
        entail_recall: recall,
        entail_f1: harmonic_mean(precision, recall),
        coverage_mean: cov as f64 / n as f64,
        unsupported_rate: if content == 0 { 0.0 } else { bad as f64 / content as f64 },
        mean_len: len as f64 / n as f64,
        n,
    };
    Ok((report, entail))
}

pub fn evaluate(predictions: &[TokenSeq], examples: &[Example]) -> Result<EvalReport, EvalError> {
    evaluate_detailed(predictions, examples).map(|(r, _)| r)
}
