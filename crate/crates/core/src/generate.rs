//! Tag-conditioned generation and the clean-data filtering baseline.
//!
//! Decoding is written against [`StepModel`], a next-token distribution
//! over integer ids, so the same decoders run on the copy-mixture model and
//! on hand-built toy models in tests.

use std::cmp::Ordering;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cond::{CondError, CopyMixtureModel, FitReport, SourceContext};
use crate::corpus::{linearize, Example, Table, COL_SEP, ROW_SEP};
use crate::halscore::{HallucinationTag, ScoreError, Scorer};
use crate::ngram::{argmax, EOS_ID, UNK_ID};
use crate::tokenizer::TokenSeq;

/// A next-token distribution over ids `0..size()`.
pub trait StepModel {
    fn size(&self) -> usize;
    fn eos(&self) -> u32;
    fn step(&self, history: &[u32]) -> Vec<f64>;
    /// Ids that may never be emitted.
    fn banned(&self, _id: u32) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// `None` decodes with the model's global copy weight.
    pub tag: Option<HallucinationTag>,
    pub strategy: Strategy,
    pub max_len: usize,
    pub seed: u64,
    /// Each source occurrence can be copied once; emitted tokens give up
    /// their copy mass. Off (the default), the copy distribution is fixed
    /// for the whole decode. Greedy decoding tends to loop without it.
    #[serde(default)]
    pub consume_copies: bool,
}

impl GenerationConfig {
    pub fn greedy(tag: Option<HallucinationTag>, max_len: usize) -> Self {
        Self {
            tag,
            strategy: Strategy::Greedy,
            max_len,
            seed: 0,
            consume_copies: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_len == 0 {
            return Err("max_len must be at least 1".into());
        }
        match self.strategy {
            Strategy::Beam { width: 0 } => Err("beam width must be at least 1".into()),
            Strategy::Sample { temperature } if temperature.is_nan() || temperature <= 0.0 => {
                Err("temperature must be > 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// A decoded sequence (EOS excluded) and its total log-probability (EOS
/// included when the sequence finished).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<u32>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per scored position.
    pub fn normalized(&self) -> f64 {
        let n = self.ids.len() + usize::from(self.finished);
        if n == 0 {
            0.0
        } else {
            self.logprob / n as f64
        }
    }
}

fn masked_argmax<M: StepModel + ?Sized>(model: &M, dist: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &p) in dist.iter().enumerate() {
        if model.banned(i as u32) {
            continue;
        }
        if best.is_none_or(|b| p > dist[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or_else(|| argmax(dist))
}

pub fn greedy_decode<M: StepModel + ?Sized>(model: &M, max_len: usize) -> Hypothesis {
    let mut hyp = Hypothesis {
        ids: Vec::new(),
        logprob: 0.0,
        finished: false,
    };
    while hyp.ids.len() < max_len {
        let dist = model.step(&hyp.ids);
        let best = masked_argmax(model, &dist);
        hyp.logprob += dist[best].ln();
        if best as u32 == model.eos() {
            hyp.finished = true;
            break;
        }
        hyp.ids.push(best as u32);
    }
    hyp
}

/// Beam search. Each step keeps the `width` best expansions by total
/// log-probability; expansions ending in EOS leave the beam as finished
/// hypotheses. The result is chosen by length-normalized log-probability
/// among finished hypotheses and those still open at `max_len`.
pub fn beam_decode<M: StepModel + ?Sized>(model: &M, width: usize, max_len: usize) -> Hypothesis {
    let width = width.max(1);
    let mut alive = vec![Hypothesis {
        ids: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if alive.is_empty() {
            break;
        }
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (h, hyp) in alive.iter().enumerate() {
            let dist = model.step(&hyp.ids);
            for (w, &p) in dist.iter().enumerate() {
                if p > 0.0 && !model.banned(w as u32) {
                    cands.push((hyp.logprob + p.ln(), h, w as u32));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(width);
        for &(score, h, w) in cands.iter().take(width) {
            let mut ids = alive[h].ids.clone();
            if w == model.eos() {
                done.push(Hypothesis {
                    ids,
                    logprob: score,
                    finished: true,
                });
            } else {
                ids.push(w);
                next.push(Hypothesis {
                    ids,
                    logprob: score,
                    finished: false,
                });
            }
        }
        alive = next;
    }
    done.extend(alive);
    let mut best = done.swap_remove(0);
    for h in done {
        if h.normalized() > best.normalized() {
            best = h;
        }
    }
    best
}

pub fn sample_decode<M: StepModel + ?Sized>(
    model: &M,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Hypothesis {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hyp = Hypothesis {
        ids: Vec::new(),
        logprob: 0.0,
        finished: false,
    };
    while hyp.ids.len() < max_len {
        let dist = model.step(&hyp.ids);
        let weights: Vec<f64> = dist
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if model.banned(i as u32) {
                    0.0
                } else {
                    p.powf(1.0 / temperature)
                }
            })
            .collect();
        let pick = match WeightedIndex::new(&weights) {
            Ok(w) => w.sample(&mut rng),
            Err(_) => masked_argmax(model, &dist),
        };
        hyp.logprob += dist[pick].ln();
        if pick as u32 == model.eos() {
            hyp.finished = true;
            break;
        }
        hyp.ids.push(pick as u32);
    }
    hyp
}

pub fn decode<M: StepModel + ?Sized>(model: &M, config: &GenerationConfig) -> Hypothesis {
    match config.strategy {
        Strategy::Greedy => greedy_decode(model, config.max_len),
        Strategy::Beam { width } => beam_decode(model, width, config.max_len),
        Strategy::Sample { temperature } => {
            sample_decode(model, temperature, config.max_len, config.seed)
        }
    }
}

/// The copy-mixture model bound to one source and one copy weight.
pub struct CondStepper<'a> {
    model: &'a CopyMixtureModel,
    ctx: SourceContext,
    copy: Vec<f64>,
    lambda: f64,
    banned: Vec<bool>,
    consume: bool,
}

impl<'a> CondStepper<'a> {
    pub fn new(
        model: &'a CopyMixtureModel,
        source: &Table,
        tag: Option<HallucinationTag>,
        consume_copies: bool,
    ) -> Self {
        let lin = linearize(source, tag);
        let ctx = model.source_context(&lin);
        let copy = model.copy_distribution(&ctx);
        let mut banned = vec![false; ctx.len()];
        for (i, b) in banned.iter_mut().enumerate() {
            let tok = ctx.token(&model.base, i as u32);
            *b = i as u32 == UNK_ID
                || tok == ROW_SEP
                || tok == COL_SEP
                || HallucinationTag::from_token(tok).is_some();
        }
        Self {
            model,
            ctx,
            copy,
            lambda: model.weights.lambda_for(tag),
            banned,
            consume: consume_copies,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn detokenize(&self, ids: &[u32]) -> TokenSeq {
        TokenSeq::from_tokens(ids.iter().map(|&i| self.ctx.token(&self.model.base, i).to_string()))
    }
}

impl StepModel for CondStepper<'_> {
    fn size(&self) -> usize {
        self.ctx.len()
    }

    fn eos(&self) -> u32 {
        EOS_ID
    }

    fn step(&self, history: &[u32]) -> Vec<f64> {
        if self.consume {
            let copy = self.model.copy_distribution_after(&self.ctx, history);
            self.model.mixture_ids(&self.ctx, &copy, history, self.lambda)
        } else {
            self.model.mixture_ids(&self.ctx, &self.copy, history, self.lambda)
        }
    }

    fn banned(&self, id: u32) -> bool {
        self.banned[id as usize]
    }
}

pub fn generate(model: &CopyMixtureModel, source: &Table, config: &GenerationConfig) -> TokenSeq {
    let stepper = CondStepper::new(model, source, config.tag, config.consume_copies);
    let hyp = decode(&stepper, config);
    stepper.detokenize(&hyp.ids)
}

/// Generates for every example in parallel; example `i` samples with seed
/// `config.seed + i` so outputs do not depend on scheduling.
pub fn generate_batch(
    model: &CopyMixtureModel,
    examples: &[Example],
    config: &GenerationConfig,
) -> Vec<TokenSeq> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let cfg = GenerationConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..*config
            };
            generate(model, &e.source, &cfg)
        })
        .collect()
}

/// Fits one copy weight per tag on top of `init`'s base LM. Tags without
/// examples keep the global weight and are listed in the report.
pub fn train_controlled(
    init: &CopyMixtureModel,
    examples: &[Example],
) -> Result<(CopyMixtureModel, FitReport), CondError> {
    if let Some(e) = examples.iter().find(|e| e.tag.is_none()) {
        return Err(CondError::Untagged(e.id.clone()));
    }
    init.fit(examples, true, true)
}

/// Keeps the `⌊N · keep_fraction⌋` examples with the smallest score, ties
/// broken by input order; the result preserves input order.
pub fn filter_clean(
    examples: &[Example],
    keep_fraction: f64,
    by: Scorer,
) -> Result<Vec<Example>, ScoreError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(ScoreError::BadFraction(keep_fraction));
    }
    let mut scored = Vec::with_capacity(examples.len());
    for (i, e) in examples.iter().enumerate() {
        let s = by
            .get(e)
            .ok_or_else(|| ScoreError::Unscored(e.id.clone(), by.name()))?;
        scored.push((s, i));
    }
    let keep = ((examples.len() as f64) * keep_fraction + 1e-9).floor() as usize;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = scored.into_iter().take(keep).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| examples[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond::CopyWeights;
    use crate::ngram::{train_ngram, NgramConfig};
    use crate::tokenizer::tokenize;

    /// Hand-set distributions keyed by history; ids: 0 = EOS, 1 = a, 2 = b.
    struct Toy;

    impl StepModel for Toy {
        fn size(&self) -> usize {
            3
        }
        fn eos(&self) -> u32 {
            0
        }
        fn step(&self, history: &[u32]) -> Vec<f64> {
            match history {
                [] => vec![0.1, 0.5, 0.4],
                [1] => vec![0.33, 0.34, 0.33],
                [2] => vec![0.9, 0.05, 0.05],
                [1, 1] => vec![0.5, 0.25, 0.25],
                _ => vec![0.6, 0.2, 0.2],
            }
        }
    }

    /// All sequences up to `max_len` tokens, scored like the beam's final
    /// selection.
    fn exhaustive_best<M: StepModel>(model: &M, max_len: usize) -> Hypothesis {
        let mut best: Option<Hypothesis> = None;
        let mut stack = vec![Hypothesis {
            ids: vec![],
            logprob: 0.0,
            finished: false,
        }];
        while let Some(h) = stack.pop() {
            if h.finished || h.ids.len() == max_len {
                if best.as_ref().is_none_or(|b| h.normalized() > b.normalized()) {
                    best = Some(h);
                }
                continue;
            }
            let dist = model.step(&h.ids);
            for (w, p) in dist.iter().enumerate() {
                let mut ids = h.ids.clone();
                let finished = w as u32 == model.eos();
                if !finished {
                    ids.push(w as u32);
                }
                stack.push(Hypothesis {
                    ids,
                    logprob: h.logprob + p.ln(),
                    finished,
                });
            }
        }
        best.unwrap()
    }

    #[test]
    fn beam_finds_what_greedy_misses() {
        let greedy = greedy_decode(&Toy, 2);
        let beam = beam_decode(&Toy, 3, 2);
        let oracle = exhaustive_best(&Toy, 2);
        assert_eq!(greedy.ids, [1, 1]);
        assert_eq!(beam.ids, oracle.ids);
        assert_eq!(beam.ids, [2]);
        assert!(beam.logprob >= greedy.logprob);
    }

    #[test]
    fn beam_of_one_is_greedy() {
        for max_len in 1..5 {
            assert_eq!(beam_decode(&Toy, 1, max_len), greedy_decode(&Toy, max_len));
        }
    }

    fn toy_model() -> CopyMixtureModel {
        let lines = [
            "ana lee , writer , paris .",
            "bo kim , painter , rome .",
            "cy ray , singer , oslo .",
            "di fox , actor , lima .",
        ];
        let t: Vec<TokenSeq> = lines.iter().map(|l| tokenize(l)).collect();
        let base = train_ngram(&t, &NgramConfig::default()).unwrap();
        CopyMixtureModel::new(base, 0.5)
            .unwrap()
            .with_weights(CopyWeights {
                global: 0.5,
                per_tag: Some([0.9, 0.7, 0.5, 0.3, 0.1]),
            })
            .unwrap()
    }

    #[test]
    fn cond_beam_one_equals_greedy_and_is_deterministic() {
        let m = toy_model();
        let src = Table::new([("name", "zed qua"), ("occupation", "writer"), ("city", "rome")]);
        for tag in HallucinationTag::all() {
            let g = GenerationConfig::greedy(Some(tag), 12);
            let b = GenerationConfig {
                strategy: Strategy::Beam { width: 1 },
                ..g
            };
            assert_eq!(generate(&m, &src, &g), generate(&m, &src, &b));
            assert_eq!(generate(&m, &src, &g), generate(&m, &src, &g));
        }
        let s = GenerationConfig {
            strategy: Strategy::Sample { temperature: 1.0 },
            seed: 17,
            ..GenerationConfig::greedy(None, 12)
        };
        assert_eq!(generate(&m, &src, &s), generate(&m, &src, &s));
    }

    #[test]
    fn never_emits_markers_tags_or_unk() {
        let m = toy_model();
        let src = Table::new([("name", "zed qua")]);
        for tag in HallucinationTag::all() {
            let s = GenerationConfig {
                strategy: Strategy::Sample { temperature: 3.0 },
                seed: u64::from(tag.level()),
                ..GenerationConfig::greedy(Some(tag), 30)
            };
            let out = generate(&m, &src, &s);
            assert!(out.iter().all(|t| t != ROW_SEP
                && t != COL_SEP
                && t != "<unk>"
                && HallucinationTag::from_token(t).is_none()));
        }
    }

    #[test]
    fn high_copy_weight_copies_new_names() {
        let m = toy_model();
        let src = Table::new([("name", "zed qua"), ("occupation", "writer")]);
        let cfg = GenerationConfig {
            consume_copies: true,
            ..GenerationConfig::greedy(HallucinationTag::new(0).ok(), 12)
        };
        let out = generate(&m, &src, &cfg);
        assert!(out.iter().any(|t| t == "zed" || t == "qua"), "{out}");
    }

    #[test]
    fn fixed_copy_distribution_repeats() {
        let m = toy_model();
        let src = Table::new([("name", "zed qua"), ("occupation", "writer")]);
        let cfg = GenerationConfig {
            consume_copies: false,
            ..GenerationConfig::greedy(HallucinationTag::new(0).ok(), 12)
        };
        let out = generate(&m, &src, &cfg);
        let distinct: std::collections::BTreeSet<&String> = out.iter().collect();
        assert!(distinct.len() < out.len(), "{out}");
    }

    #[test]
    fn config_validation() {
        let mut c = GenerationConfig::greedy(None, 0);
        assert!(c.validate().is_err());
        c.max_len = 5;
        c.strategy = Strategy::Beam { width: 0 };
        assert!(c.validate().is_err());
        c.strategy = Strategy::Sample { temperature: 0.0 };
        assert!(c.validate().is_err());
    }

    fn scored(scores: &[f64]) -> Vec<Example> {
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut e = Example::new(i.to_string(), Table::default(), "x");
                e.hal_wo = Some(*s);
                e
            })
            .collect()
    }

    #[test]
    fn filter_keeps_smallest_scores_in_input_order() {
        let ex = scored(&[0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.0]);
        let kept = filter_clean(&ex, 0.2, Scorer::Wo).unwrap();
        let ids: Vec<&str> = kept.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["1", "9"]);
        assert_eq!(filter_clean(&ex, 1.0, Scorer::Wo).unwrap(), ex);
        let ties = scored(&[0.0, 0.0, 0.0, 0.5]);
        let kept = filter_clean(&ties, 0.5, Scorer::Wo).unwrap();
        assert_eq!(kept.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["0", "1"]);
    }

    #[test]
    fn filter_rejects_unscored_and_bad_fractions() {
        let mut ex = scored(&[0.1, 0.2]);
        assert!(filter_clean(&ex, 0.0, Scorer::Wo).is_err());
        assert!(filter_clean(&ex, 1.5, Scorer::Wo).is_err());
        ex[1].hal_wo = None;
        assert!(matches!(
            filter_clean(&ex, 0.5, Scorer::Wo),
            Err(ScoreError::Unscored(..))
        ));
        assert!(matches!(
            filter_clean(&ex, 0.5, Scorer::Lm),
            Err(ScoreError::Unscored(..))
        ));
    }

    #[test]
    fn train_controlled_needs_tags() {
        let m = toy_model();
        let ex = vec![Example::new("a", Table::new([("n", "x")]), "x")];
        assert!(matches!(train_controlled(&m, &ex), Err(CondError::Untagged(_))));
    }

    #[test]
    fn controlled_weights_follow_noise() {
        use crate::cond::tests::copy_corpus;
        let t0 = HallucinationTag::new(0).ok();
        let t4 = HallucinationTag::new(4).ok();
        let mut ex = copy_corpus(true, t0, 1);
        ex.extend(copy_corpus(false, t4, 2));
        let mut other = copy_corpus(true, None, 1000);
        other.extend(copy_corpus(false, None, 1001));
        let targets: Vec<TokenSeq> = other.iter().map(Example::target_tokens).collect();
        let base = train_ngram(&targets, &NgramConfig::default()).unwrap();
        let init = CopyMixtureModel::new(base, 0.5).unwrap();
        let (m, report) = train_controlled(&init, &ex).unwrap();
        let l0 = m.weights.lambda_for(t0);
        let l4 = m.weights.lambda_for(t4);
        assert!(l0 > 0.9 && l4 < 0.1, "{l0} {l4}");
        assert_eq!(report.inherited.len(), 3);
        for fit in report.per_tag.unwrap().into_iter().flatten() {
            assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
    }
}
