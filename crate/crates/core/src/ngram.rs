//! Unconditional n-gram language model trained on targets only.
//!
//! Probabilities use interpolated add-k smoothing: every order `m` adds
//! `k_m` pseudo-counts per vocabulary entry, spread according to the order
//! `m-1` distribution, with a uniform distribution below unigrams:
//!
//! ```text
//! P_0(w)     = 1 / V
//! P_m(w | h) = (c(h, w) + k_m * V * P_{m-1}(w | h')) / (c(h) + k_m * V)
//! ```
//!
//! where `h'` drops the oldest token of `h`. Unseen contexts reduce to the
//! lower order exactly, so every distribution is normalized and strictly
//! positive.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::tokenizer::TokenSeq;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "</s>";
pub const UNK_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
/// Context-only padding symbol; never part of the output space.
pub const BOS_ID: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramConfig {
    pub order: usize,
    /// One smoothing constant per order, lowest order first.
    pub k: Vec<f64>,
    pub min_count: u32,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            order: 3,
            k: vec![0.1; 3],
            min_count: 1,
        }
    }
}

impl NgramConfig {
    pub fn with_order(order: usize, k: f64) -> Self {
        Self {
            order,
            k: vec![k; order],
            min_count: 1,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.order == 0 {
            return Err(LmError::Config("order must be at least 1".into()));
        }
        if self.k.len() != self.order {
            return Err(LmError::Config(format!(
                "{} smoothing constants for order {}",
                self.k.len(),
                self.order
            )));
        }
        if let Some(k) = self.k.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(LmError::Config(format!("smoothing constant {k} must be > 0")));
        }
        if self.min_count == 0 {
            return Err(LmError::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Token ↔ id map. Id 0 is `<unk>`, id 1 is `</s>`, words follow in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub(crate) fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![UNK.to_string(), EOS.to_string()];
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>` when out of vocabulary.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ContextCounts {
    pub total: u64,
    /// Sorted by token id.
    pub next: Vec<(u32, u32)>,
}

/// A trained n-gram model. Immutable once built; queries are read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    pub(crate) config: NgramConfig,
    pub(crate) vocab: Vocab,
    /// `tables[m - 1]` maps a context of `m - 1` ids to its continuations.
    pub(crate) tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

/// Per-position record of a teacher-forced pass over a target.
///
/// Positions cover every target token plus the closing `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedPathTrace {
    pub gold_tokens: Vec<String>,
    pub gold_prob: Vec<f64>,
    pub gold_logprob: Vec<f64>,
    pub argmax_token: Vec<String>,
    /// Whether the model's most probable token equals the gold token in the
    /// model's own output space.
    pub argmax_hit: Vec<bool>,
}

impl ForcedPathTrace {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            gold_tokens: Vec::with_capacity(n),
            gold_prob: Vec::with_capacity(n),
            gold_logprob: Vec::with_capacity(n),
            argmax_token: Vec::with_capacity(n),
            argmax_hit: Vec::with_capacity(n),
        }
    }

    pub(crate) fn record(&mut self, gold: &str, p: f64, argmax: &str, hit: bool) {
        self.gold_tokens.push(gold.to_string());
        self.gold_prob.push(p);
        self.gold_logprob.push(p.ln());
        self.argmax_token.push(argmax.to_string());
        self.argmax_hit.push(hit);
    }

    pub fn len(&self) -> usize {
        self.gold_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold_tokens.is_empty()
    }

    pub fn mean_logprob(&self) -> f64 {
        self.gold_logprob.iter().sum::<f64>() / self.len() as f64
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn train_ngram(targets: &[TokenSeq], config: &NgramConfig) -> Result<NgramModel, LmError> {
    config.validate()?;
    if targets.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut freq: BTreeMap<&str, u32> = BTreeMap::new();
    for t in targets {
        for tok in t.iter() {
            *freq.entry(tok.as_str()).or_default() += 1;
        }
    }
    let words = freq
        .into_iter()
        .filter(|(w, c)| *c >= config.min_count && *w != UNK && *w != EOS)
        .map(|(w, _)| w.to_string());
    let vocab = Vocab::from_words(words);

    let n = config.order;
    let mut raw: Vec<HashMap<Vec<u32>, HashMap<u32, u32>>> = vec![HashMap::new(); n];
    for t in targets {
        let mut padded = vec![BOS_ID; n - 1];
        padded.extend(t.iter().map(|tok| vocab.id(tok)));
        padded.push(EOS_ID);
        for i in (n - 1)..padded.len() {
            let w = padded[i];
            for m in 1..=n {
                let ctx = padded[i + 1 - m..i].to_vec();
                *raw[m - 1].entry(ctx).or_default().entry(w).or_default() += 1;
            }
        }
    }
    let tables = raw
        .into_iter()
        .map(|table| {
            table
                .into_iter()
                .map(|(ctx, next)| {
                    let mut next: Vec<(u32, u32)> = next.into_iter().collect();
                    next.sort_unstable();
                    let total = next.iter().map(|(_, c)| u64::from(*c)).sum();
                    (ctx, ContextCounts { total, next })
                })
                .collect()
        })
        .collect();
    Ok(NgramModel {
        config: config.clone(),
        vocab,
        tables,
    })
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Raw continuation count `c(context, token)`; contexts shorter than
    /// `order - 1` address the lower-order tables.
    pub fn count(&self, context: &[u32], token: u32) -> u32 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|c| {
                c.next
                    .binary_search_by_key(&token, |(w, _)| *w)
                    .ok()
                    .map(|i| c.next[i].1)
            })
            .unwrap_or(0)
    }

    /// Next-token distribution over the vocabulary (indexed by id) after
    /// the id history `history`.
    pub fn distribution_ids(&self, history: &[u32]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut dist = vec![1.0 / v as f64; v];
        let n = self.config.order;
        let mut padded = vec![BOS_ID; (n - 1).saturating_sub(history.len())];
        padded.extend_from_slice(&history[history.len().saturating_sub(n - 1)..]);
        for m in 1..=n {
            let ctx = &padded[padded.len() + 1 - m..];
            let Some(counts) = self.tables[m - 1].get(ctx) else {
                continue;
            };
            let alpha = self.config.k[m - 1] * v as f64;
            let denom = counts.total as f64 + alpha;
            for p in dist.iter_mut() {
                *p *= alpha;
            }
            for &(w, c) in &counts.next {
                dist[w as usize] += f64::from(c);
            }
            for p in dist.iter_mut() {
                *p /= denom;
            }
        }
        dist
    }

    pub fn next_distribution(&self, prefix: &TokenSeq) -> Vec<f64> {
        self.distribution_ids(&self.encode(prefix))
    }

    /// Probability of `token` after `prefix`, with OOV tokens scored as `<unk>`.
    pub fn prob(&self, prefix: &TokenSeq, token: &str) -> f64 {
        self.next_distribution(prefix)[self.vocab.id(token) as usize]
    }

    /// Teacher-forced pass: position `t` conditions on gold tokens before it.
    pub fn forced_path(&self, target: &TokenSeq) -> ForcedPathTrace {
        let mut ids = self.encode(target);
        ids.push(EOS_ID);
        let mut trace = ForcedPathTrace::with_capacity(ids.len());
        for (t, &gold) in ids.iter().enumerate() {
            let dist = self.distribution_ids(&ids[..t]);
            let best = argmax(&dist);
            let gold_tok = target.get(t).map(String::as_str).unwrap_or(EOS);
            trace.record(
                gold_tok,
                dist[gold as usize],
                self.vocab.token(best as u32),
                best as u32 == gold,
            );
        }
        trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::tokenize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(lines: &[&str]) -> Vec<TokenSeq> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    fn seq(v: &[&str]) -> TokenSeq {
        TokenSeq::from_tokens(v.iter().copied())
    }

    #[test]
    fn rejects_empty_corpus_and_bad_config() {
        assert!(matches!(
            train_ngram(&[], &NgramConfig::default()),
            Err(LmError::EmptyCorpus)
        ));
        let c = corpus(&["a"]);
        assert!(train_ngram(&c, &NgramConfig::with_order(0, 0.1)).is_err());
        assert!(train_ngram(&c, &NgramConfig::with_order(2, 0.0)).is_err());
    }

    #[test]
    fn unigram_symmetry() {
        let m = train_ngram(&corpus(&["a b"]), &NgramConfig::with_order(1, 0.1)).unwrap();
        let d = m.next_distribution(&TokenSeq::new());
        let (a, b) = (m.vocab.id("a") as usize, m.vocab.id("b") as usize);
        assert_eq!(d[a], d[b]);
        assert!(d[UNK_ID as usize] > 0.0 && d[UNK_ID as usize] < d[a]);
        // V = {unk, eos, a, b}, N = 3 (a, b, eos): P(a) = (1 + 0.1) / (3 + 0.4)
        assert!((d[a] - 1.1 / 3.4).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_bigram_values() {
        // Targets "x y" and "x z"; V = {unk, eos, x, y, z} = 5, k = 0.5 per order.
        let m = train_ngram(&corpus(&["x y", "x z"]), &NgramConfig::with_order(2, 0.5)).unwrap();
        let id = |t: &str| m.vocab.id(t) as usize;
        // unigram counts: x 2, y 1, z 1, eos 2, unk 0; N = 6; alpha = 2.5
        let p1 = |c: f64| (c + 2.5 * 0.2) / (6.0 + 2.5);
        // context "x" seen twice: y once, z once
        let d = m.next_distribution(&seq(&["x"]));
        let want_y = (1.0 + 2.5 * p1(1.0)) / (2.0 + 2.5);
        let want_x = (0.0 + 2.5 * p1(2.0)) / (2.0 + 2.5);
        let want_unk = (0.0 + 2.5 * p1(0.0)) / (2.0 + 2.5);
        assert!((d[id("y")] - want_y).abs() < 1e-12);
        assert!((d[id("z")] - want_y).abs() < 1e-12);
        assert!((d[id("x")] - want_x).abs() < 1e-12);
        assert!((d[UNK_ID as usize] - want_unk).abs() < 1e-12);
        // BOS context: x follows BOS twice
        let d0 = m.next_distribution(&TokenSeq::new());
        let want = (2.0 + 2.5 * p1(2.0)) / (2.0 + 2.5);
        assert!((d0[id("x")] - want).abs() < 1e-12);
        // unseen context "y y" backs off to the unigram exactly... except "y" is seen
        let d_unseen = m.distribution_ids(&[UNK_ID]);
        assert!((d_unseen[id("x")] - p1(2.0)).abs() < 1e-12);
    }

    #[test]
    fn distributions_sum_to_one_for_random_contexts() {
        let m = train_ngram(
            &corpus(&[
                "john smith is a writer .",
                "ana lee is a painter from paris .",
                "bo is a footballer .",
            ]),
            &NgramConfig::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let toks = m.vocab.tokens().to_vec();
        for _ in 0..100 {
            let len = rng.gen_range(0..6);
            let prefix: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        "never-seen".to_string()
                    } else {
                        toks[rng.gen_range(0..toks.len())].clone()
                    }
                })
                .collect();
            let d = m.next_distribution(&TokenSeq::from_tokens(prefix));
            let sum: f64 = d.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            assert!(d.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn all_unknown_prefix_is_well_formed() {
        let m = train_ngram(&corpus(&["a b c"]), &NgramConfig::default()).unwrap();
        let d = m.next_distribution(&seq(&["zz", "qq", "rr"]));
        assert!(d.iter().all(|p| p.is_finite() && *p > 0.0));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn context_matters() {
        let m = train_ngram(
            &corpus(&[
                "born in paris",
                "lived in paris",
                "died in paris",
                "the city",
                "the river",
            ]),
            &NgramConfig::default(),
        )
        .unwrap();
        assert!(m.prob(&seq(&["x", "in"]), "paris") > m.prob(&seq(&["x", "the"]), "paris"));
    }

    #[test]
    fn forced_path_on_most_frequent_sentence() {
        let m = train_ngram(
            &corpus(&["a b c", "a b c", "a b c", "a d"]),
            &NgramConfig::with_order(2, 0.1),
        )
        .unwrap();
        let trace = m.forced_path(&tokenize("a b c"));
        assert_eq!(trace.len(), 4);
        assert!(trace.argmax_hit.iter().all(|h| *h));
        assert_eq!(trace.gold_tokens.last().unwrap(), EOS);
    }

    #[test]
    fn empty_target_scores_eos_only() {
        let m = train_ngram(&corpus(&["a"]), &NgramConfig::default()).unwrap();
        let trace = m.forced_path(&TokenSeq::new());
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.gold_tokens, [EOS]);
    }

    #[test]
    fn forced_path_matches_next_distribution_exactly() {
        let m = train_ngram(
            &corpus(&["a b a c", "c b a", "a a a b"]),
            &NgramConfig::default(),
        )
        .unwrap();
        let target = seq(&["a", "b", "zz", "c"]);
        let trace = m.forced_path(&target);
        for t in 0..trace.len() {
            let prefix = TokenSeq::from_tokens(target[..t].iter().cloned());
            let gold = target.get(t).map(String::as_str).unwrap_or(EOS);
            let p = m.next_distribution(&prefix)[m.vocab.id(gold) as usize];
            assert_eq!(trace.gold_logprob[t], p.ln());
            assert!(trace.gold_logprob[t] <= 0.0 && trace.gold_logprob[t].is_finite());
        }
    }

    #[test]
    fn more_bigram_evidence_never_lowers_probability() {
        let mut lines = vec!["u v", "u w", "x v"];
        let mut last = 0.0;
        for _ in 0..5 {
            let m = train_ngram(&corpus(&lines), &NgramConfig::with_order(2, 0.1)).unwrap();
            let p = m.prob(&seq(&["u"]), "v");
            assert!(p >= last);
            last = p;
            lines.push("u v");
        }
    }

    #[test]
    fn min_count_maps_rare_words_to_unk() {
        let cfg = NgramConfig {
            min_count: 2,
            ..NgramConfig::default()
        };
        let m = train_ngram(&corpus(&["a b", "a c"]), &cfg).unwrap();
        assert_eq!(m.vocab.get("b"), None);
        assert!(m.vocab.get("a").is_some());
        assert_eq!(m.count(&[], UNK_ID), 2);
    }
}
