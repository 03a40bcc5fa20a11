//! Conditional LM realized as a copy mixture:
//!
//! ```text
//! P_x(w | prefix, source) = λ · copy(w | source) + (1 − λ) · P_base(w | prefix)
//! ```
//!
//! The output space is the base vocabulary extended with source tokens the
//! base model has never seen, so out-of-vocabulary values (new names, new
//! dates) can still be copied. `λ` is fitted by EM, either once for the
//! whole corpus or once per control tag.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{linearize, Example, LinearizedSource};
use crate::halscore::{HallucinationTag, NUM_TAGS};
use crate::ngram::{argmax, ForcedPathTrace, NgramModel, EOS, EOS_ID, UNK_ID};
use crate::tokenizer::TokenSeq;

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-6;
pub const LAMBDA_INIT: f64 = 0.5;
pub const DEFAULT_K_COPY: f64 = 1e-8;
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum CondError {
    #[error("no training examples carry tag {0}")]
    EmptyTagSubcorpus(HallucinationTag),
    #[error("example {0:?} has no control tag")]
    Untagged(String),
    #[error("cannot fit the copy weight on an empty corpus")]
    EmptyCorpus,
    #[error("copy weight {0} outside (0, 1)")]
    BadLambda(f64),
    #[error("copy smoothing constant {0} must be > 0")]
    BadKCopy(f64),
}

/// Which linearized tokens feed the copy distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopySource {
    #[default]
    Values,
    ValuesAndFields,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CopyWeights {
    pub global: f64,
    pub per_tag: Option<[f64; NUM_TAGS]>,
}

impl CopyWeights {
    pub fn lambda_for(&self, tag: Option<HallucinationTag>) -> f64 {
        match (tag, self.per_tag) {
            (Some(tag), Some(map)) => map[tag.level() as usize],
            _ => self.global,
        }
    }

    fn validate(&self) -> Result<(), CondError> {
        let all = std::iter::once(self.global).chain(self.per_tag.into_iter().flatten());
        for l in all {
            if !(l > 0.0 && l < 1.0) {
                return Err(CondError::BadLambda(l));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyMixtureModel {
    pub base: NgramModel,
    pub weights: CopyWeights,
    pub k_copy: f64,
    pub copy_source: CopySource,
}

/// Copy statistics of one source over the extended output space.
#[derive(Debug, Clone)]
pub struct SourceContext {
    base_len: usize,
    /// Source tokens absent from the base vocabulary, in first-seen order;
    /// extended id `base_len + i`.
    extra: Vec<String>,
    extra_index: HashMap<String, u32>,
    counts: Vec<(u32, u32)>,
    n_tokens: u32,
}

impl SourceContext {
    pub fn len(&self) -> usize {
        self.base_len + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_source_tokens(&self) -> u32 {
        self.n_tokens
    }

    pub fn extra_tokens(&self) -> &[String] {
        &self.extra
    }

    /// Extended id of a target token; OOV tokens that are not in the source
    /// fall back to `<unk>`.
    pub fn id(&self, base: &NgramModel, token: &str) -> u32 {
        base.vocab()
            .get(token)
            .or_else(|| self.extra_index.get(token).copied())
            .unwrap_or(UNK_ID)
    }

    pub fn token<'a>(&'a self, base: &'a NgramModel, id: u32) -> &'a str {
        let i = id as usize;
        if i < self.base_len {
            base.vocab().token(id)
        } else {
            &self.extra[i - self.base_len]
        }
    }
}

impl CopyMixtureModel {
    pub fn new(base: NgramModel, lambda: f64) -> Result<Self, CondError> {
        let model = Self {
            base,
            weights: CopyWeights {
                global: lambda,
                per_tag: None,
            },
            k_copy: DEFAULT_K_COPY,
            copy_source: CopySource::Values,
        };
        model.weights.validate()?;
        Ok(model)
    }

    pub fn with_k_copy(mut self, k_copy: f64) -> Result<Self, CondError> {
        if !(k_copy > 0.0 && k_copy.is_finite()) {
            return Err(CondError::BadKCopy(k_copy));
        }
        self.k_copy = k_copy;
        Ok(self)
    }

    pub fn with_copy_source(mut self, copy_source: CopySource) -> Self {
        self.copy_source = copy_source;
        self
    }

    pub fn with_weights(mut self, weights: CopyWeights) -> Result<Self, CondError> {
        weights.validate()?;
        self.weights = weights;
        Ok(self)
    }

    pub fn source_context(&self, source: &LinearizedSource) -> SourceContext {
        let vocab = self.base.vocab();
        let mut toks = source.value_tokens();
        if self.copy_source == CopySource::ValuesAndFields {
            toks.extend(source.field_tokens());
        }
        let base_len = vocab.len();
        let mut extra = Vec::new();
        let mut extra_index = HashMap::new();
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for t in &toks {
            let id = match vocab.get(t) {
                Some(id) => id,
                None => *extra_index.entry(t.to_string()).or_insert_with(|| {
                    extra.push(t.to_string());
                    (base_len + extra.len() - 1) as u32
                }),
            };
            *counts.entry(id).or_default() += 1;
        }
        let mut counts: Vec<(u32, u32)> = counts.into_iter().collect();
        counts.sort_unstable();
        SourceContext {
            base_len,
            extra,
            extra_index,
            counts,
            n_tokens: toks.len() as u32,
        }
    }

    /// `(count(w) + k) / (n + k·|E|)` over the extended space `E`.
    pub fn copy_distribution(&self, ctx: &SourceContext) -> Vec<f64> {
        let size = ctx.len();
        let denom = f64::from(ctx.n_tokens) + self.k_copy * size as f64;
        let mut dist = vec![self.k_copy; size];
        for &(w, c) in &ctx.counts {
            dist[w as usize] += f64::from(c);
        }
        for p in dist.iter_mut() {
            *p /= denom;
        }
        dist
    }

    /// Copy distribution with each source occurrence usable once: tokens
    /// already in `emitted` give up one count per emission. Once every
    /// occurrence is used the component is flat.
    pub fn copy_distribution_after(&self, ctx: &SourceContext, emitted: &[u32]) -> Vec<f64> {
        let mut used: HashMap<u32, u32> = HashMap::new();
        for &id in emitted {
            *used.entry(id).or_default() += 1;
        }
        let mut remaining = Vec::with_capacity(ctx.counts.len());
        let mut n = 0u32;
        for &(w, c) in &ctx.counts {
            let left = c.saturating_sub(used.get(&w).copied().unwrap_or(0));
            n += left;
            remaining.push((w, left));
        }
        let size = ctx.len();
        let denom = f64::from(n) + self.k_copy * size as f64;
        let mut dist = vec![self.k_copy; size];
        for (w, c) in remaining {
            dist[w as usize] += f64::from(c);
        }
        for p in dist.iter_mut() {
            *p /= denom;
        }
        dist
    }

    /// Mixture distribution over the extended space for an id history.
    pub fn mixture_ids(&self, ctx: &SourceContext, copy: &[f64], history: &[u32], lambda: f64) -> Vec<f64> {
        let base_hist: Vec<u32> = history
            .iter()
            .map(|&id| if (id as usize) < ctx.base_len { id } else { UNK_ID })
            .collect();
        let base = self.base.distribution_ids(&base_hist);
        let mut dist = Vec::with_capacity(ctx.len());
        for (i, &c) in copy.iter().enumerate() {
            let b = base.get(i).copied().unwrap_or(0.0);
            dist.push(lambda * c + (1.0 - lambda) * b);
        }
        dist
    }

    pub fn next_distribution_cond(
        &self,
        source: &LinearizedSource,
        prefix: &TokenSeq,
        tag: Option<HallucinationTag>,
    ) -> (SourceContext, Vec<f64>) {
        let ctx = self.source_context(source);
        let copy = self.copy_distribution(&ctx);
        let history: Vec<u32> = prefix.iter().map(|t| ctx.id(&self.base, t)).collect();
        let dist = self.mixture_ids(&ctx, &copy, &history, self.weights.lambda_for(tag));
        (ctx, dist)
    }

    /// Teacher-forced pass under the global copy weight.
    pub fn forced_path_cond(&self, source: &LinearizedSource, target: &TokenSeq) -> ForcedPathTrace {
        let ctx = self.source_context(source);
        let copy = self.copy_distribution(&ctx);
        let mut ids: Vec<u32> = target.iter().map(|t| ctx.id(&self.base, t)).collect();
        ids.push(EOS_ID);
        let mut trace = ForcedPathTrace::with_capacity(ids.len());
        for (t, &gold) in ids.iter().enumerate() {
            let dist = self.mixture_ids(&ctx, &copy, &ids[..t], self.weights.global);
            let best = argmax(&dist) as u32;
            let gold_tok = target.get(t).map(String::as_str).unwrap_or(EOS);
            trace.record(
                gold_tok,
                dist[gold as usize],
                ctx.token(&self.base, best),
                best == gold,
            );
        }
        trace
    }

    /// Per-position `(copy(w_t), P_base(w_t))` pairs: the sufficient
    /// statistics for fitting `λ`.
    fn component_probs(&self, example: &Example) -> Vec<(f64, f64)> {
        let source = linearize(&example.source, None);
        let ctx = self.source_context(&source);
        let copy = self.copy_distribution(&ctx);
        let target = example.target_tokens();
        let mut ids: Vec<u32> = target.iter().map(|t| ctx.id(&self.base, t)).collect();
        ids.push(EOS_ID);
        let mut out = Vec::with_capacity(ids.len());
        let mut base_hist = Vec::with_capacity(ids.len());
        for &gold in &ids {
            let base = self.base.distribution_ids(&base_hist);
            let b = base.get(gold as usize).copied().unwrap_or(0.0);
            out.push((copy[gold as usize], b));
            base_hist.push(if (gold as usize) < ctx.base_len { gold } else { UNK_ID });
        }
        out
    }
}

/// Result of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmFit {
    pub lambda: f64,
    pub iterations: usize,
    /// Log-likelihood at the initial weight, then after every update.
    pub log_likelihood: Vec<f64>,
}

fn log_likelihood(pairs: &[(f64, f64)], lambda: f64) -> f64 {
    pairs
        .iter()
        .map(|&(a, b)| (lambda * a + (1.0 - lambda) * b).ln())
        .sum()
}

/// EM on the two-component mixture weight. Statistics are reduced in input
/// order so the result does not depend on thread scheduling.
pub fn fit_lambda(pairs: &[(f64, f64)]) -> EmFit {
    let mut lambda = LAMBDA_INIT;
    let mut ll = vec![log_likelihood(pairs, lambda)];
    let mut iterations = 0;
    if pairs.is_empty() {
        return EmFit {
            lambda,
            iterations,
            log_likelihood: ll,
        };
    }
    while iterations < EM_MAX_ITERS {
        let resp: f64 = pairs
            .iter()
            .map(|&(a, b)| {
                let num = lambda * a;
                num / (num + (1.0 - lambda) * b)
            })
            .sum();
        let next = (resp / pairs.len() as f64).clamp(LAMBDA_MIN, LAMBDA_MAX);
        iterations += 1;
        let delta = (next - lambda).abs();
        lambda = next;
        ll.push(log_likelihood(pairs, lambda));
        if delta < EM_TOLERANCE {
            break;
        }
    }
    EmFit {
        lambda,
        iterations,
        log_likelihood: ll,
    }
}

/// Report of a copy-weight fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub global: EmFit,
    pub per_tag: Option<Vec<Option<EmFit>>>,
    /// Tags with no examples that fell back to the global weight.
    pub inherited: Vec<HallucinationTag>,
}

impl CopyMixtureModel {
    fn collect_pairs(&self, examples: &[&Example]) -> Vec<Vec<(f64, f64)>> {
        examples.par_iter().map(|e| self.component_probs(e)).collect()
    }

    /// Fits the global weight and, when `per_tag`, one weight per tag.
    /// With `inherit_missing`, a tag without examples keeps the global
    /// weight; otherwise it is an error.
    pub fn fit(
        &self,
        examples: &[Example],
        per_tag: bool,
        inherit_missing: bool,
    ) -> Result<(CopyMixtureModel, FitReport), CondError> {
        if examples.is_empty() {
            return Err(CondError::EmptyCorpus);
        }
        if per_tag {
            if let Some(e) = examples.iter().find(|e| e.tag.is_none()) {
                return Err(CondError::Untagged(e.id.clone()));
            }
        }
        let refs: Vec<&Example> = examples.iter().collect();
        let pairs = self.collect_pairs(&refs);
        let flat: Vec<(f64, f64)> = pairs.iter().flatten().copied().collect();
        let global = fit_lambda(&flat);

        let mut weights = CopyWeights {
            global: global.lambda,
            per_tag: None,
        };
        let mut report = FitReport {
            global,
            per_tag: None,
            inherited: Vec::new(),
        };
        if per_tag {
            let mut map = [weights.global; NUM_TAGS];
            let mut fits = vec![None; NUM_TAGS];
            for tag in HallucinationTag::all() {
                let sub: Vec<(f64, f64)> = examples
                    .iter()
                    .zip(&pairs)
                    .filter(|(e, _)| e.tag == Some(tag))
                    .flat_map(|(_, p)| p.iter().copied())
                    .collect();
                if sub.is_empty() {
                    if !inherit_missing {
                        return Err(CondError::EmptyTagSubcorpus(tag));
                    }
                    report.inherited.push(tag);
                    continue;
                }
                let fit = fit_lambda(&sub);
                map[tag.level() as usize] = fit.lambda;
                fits[tag.level() as usize] = Some(fit);
            }
            weights.per_tag = Some(map);
            report.per_tag = Some(fits);
        }
        let model = self.clone().with_weights(weights)?;
        Ok((model, report))
    }
}

/// Fits the copy weight(s) of `model` on `examples`; per-tag fitting
/// requires every tag to have at least one example.
pub fn fit_copy_weight(
    model: &CopyMixtureModel,
    examples: &[Example],
    per_tag: bool,
) -> Result<(CopyMixtureModel, FitReport), CondError> {
    model.fit(examples, per_tag, false)
}
