//! Per-example hallucination scores, their conversion into five control
//! tags, and corpus annotation.
//!
//! Two scorers are provided:
//!
//! * word overlap: `1 − |W_y ∩ W_x| / |W_y|` over word sets of the target
//!   and of the source values;
//! * LM comparison: the fraction of target positions (EOS included) where
//!   the conditional model's argmax is wrong *and* the unconditional LM
//!   assigns the gold token strictly more probability than the conditional
//!   model does.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cond::{CondError, CopyMixtureModel, CopySource};
use crate::corpus::{linearize, Example, LinearizedSource, Table};
use crate::ngram::{train_ngram, ForcedPathTrace, LmError, NgramConfig, NgramModel};
use crate::tokenizer::{tokenize, word_set, TokenSeq};

pub const NUM_TAGS: usize = 5;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("forced-path traces disagree: {lm} vs {lm_x} positions")]
    TraceMismatch { lm: usize, lm_x: usize },
    #[error("invalid tag {0:?}; expected hal_0 … hal_4")]
    UnknownTag(String),
    #[error("quantile bucketing needs at least {NUM_TAGS} scorable values, got {0}")]
    TooFewScores(usize),
    #[error("example {0:?} has no {1} score")]
    Unscored(String, &'static str),
    #[error("keep fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("heldout folds must be at least 2, got {0}")]
    BadFolds(usize),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Cond(#[from] CondError),
}

/// One of the five noise degrees; `hal_0` is the least noisy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HallucinationTag(u8);

const TAG_TOKENS: [&str; NUM_TAGS] = ["<hal_0>", "<hal_1>", "<hal_2>", "<hal_3>", "<hal_4>"];

impl HallucinationTag {
    pub fn new(level: u8) -> Result<Self, ScoreError> {
        if (level as usize) < NUM_TAGS {
            Ok(Self(level))
        } else {
            Err(ScoreError::UnknownTag(level.to_string()))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = HallucinationTag> {
        (0..NUM_TAGS as u8).map(HallucinationTag)
    }

    /// The reserved input token, e.g. `<hal_0>`.
    pub fn token(self) -> &'static str {
        TAG_TOKENS[self.0 as usize]
    }

    pub fn from_token(token: &str) -> Option<Self> {
        TAG_TOKENS
            .iter()
            .position(|t| *t == token)
            .map(|i| Self(i as u8))
    }
}

impl fmt::Display for HallucinationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "hal_{}", self.0)
    }
}

impl FromStr for HallucinationTag {
    type Err = ScoreError;

    /// Accepts `hal_3` and `<hal_3>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bare = s
            .strip_prefix('<')
            .and_then(|x| x.strip_suffix('>'))
            .unwrap_or(s);
        bare.strip_prefix("hal_")
            .filter(|d| d.len() == 1)
            .and_then(|d| d.parse::<u8>().ok())
            .and_then(|l| Self::new(l).ok())
            .ok_or_else(|| ScoreError::UnknownTag(s.to_string()))
    }
}

impl Serialize for HallucinationTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HallucinationTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketMode {
    /// Cut points at 0.2, 0.4, 0.6, 0.8.
    #[default]
    Fixed,
    /// Cut points at the 20/40/60/80th nearest-rank percentiles.
    Quantile,
}

/// Four cut points splitting `[0, 1]` into five left-closed intervals
/// (the top one closed at 1.0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucketer {
    pub mode: BucketMode,
    pub boundaries: [f64; NUM_TAGS - 1],
}

pub const FIXED_BOUNDARIES: [f64; NUM_TAGS - 1] = [0.2, 0.4, 0.6, 0.8];

impl Bucketer {
    pub fn fixed() -> Self {
        Self {
            mode: BucketMode::Fixed,
            boundaries: FIXED_BOUNDARIES,
        }
    }

    pub fn assign(&self, score: f64) -> HallucinationTag {
        let level = self.boundaries.iter().filter(|b| **b <= score).count();
        HallucinationTag(level.min(NUM_TAGS - 1) as u8)
    }
}

/// Builds a bucketer. In quantile mode each cut point is the first value of
/// the upper bucket, `sorted[ceil(N·i/5)]`; a cut that would capture the
/// minimum score moves to the next larger value so the minimum always lands
/// in `hal_0`.
pub fn make_bucketer(scores: &[f64], mode: BucketMode) -> Result<Bucketer, ScoreError> {
    match mode {
        BucketMode::Fixed => Ok(Bucketer::fixed()),
        BucketMode::Quantile => {
            let n = scores.len();
            if n < NUM_TAGS {
                return Err(ScoreError::TooFewScores(n));
            }
            let mut sorted = scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            let min = sorted[0];
            let max = sorted[n - 1];
            let above_min = sorted.iter().copied().find(|s| *s > min);
            let mut boundaries = [0.0; NUM_TAGS - 1];
            for (i, b) in boundaries.iter_mut().enumerate() {
                let rank = ((i + 1) * n).div_ceil(NUM_TAGS);
                let cut = sorted[rank];
                *b = if cut > min {
                    cut
                } else {
                    above_min.unwrap_or_else(|| max.next_up())
                };
            }
            Ok(Bucketer {
                mode: BucketMode::Quantile,
                boundaries,
            })
        }
    }
}

pub fn assign_tag(bucketer: &Bucketer, score: f64) -> HallucinationTag {
    bucketer.assign(score)
}

/// Source word set used by the overlap scorer.
pub fn source_word_set(source: &Table, include_fields: bool) -> std::collections::BTreeSet<String> {
    let mut toks = source.value_tokens();
    if include_fields {
        for t in source.field_tokens().iter() {
            toks.push(t.clone());
        }
    }
    word_set(&toks)
}

/// Word-overlap score; `None` when the target has no words.
pub fn score_word_overlap(source: &Table, target: &str, include_fields: bool) -> Option<f64> {
    let wy = word_set(&tokenize(target));
    if wy.is_empty() {
        return None;
    }
    let wx = source_word_set(source, include_fields);
    let shared = wy.intersection(&wx).count();
    Some(1.0 - shared as f64 / wy.len() as f64)
}

/// LM-comparison score from the two forced-path traces of one target.
pub fn hal_lm_from_traces(lm: &ForcedPathTrace, lm_x: &ForcedPathTrace) -> Result<f64, ScoreError> {
    if lm.len() != lm_x.len() || lm.is_empty() || lm.gold_tokens != lm_x.gold_tokens {
        return Err(ScoreError::TraceMismatch {
            lm: lm.len(),
            lm_x: lm_x.len(),
        });
    }
    let fired = (0..lm.len())
        .filter(|&t| !lm_x.argmax_hit[t] && lm.gold_prob[t] > lm_x.gold_prob[t])
        .count();
    Ok(fired as f64 / lm.len() as f64)
}

pub fn score_lm_comparison(
    lm: &NgramModel,
    lm_x: &CopyMixtureModel,
    source: &LinearizedSource,
    target: &TokenSeq,
) -> Result<f64, ScoreError> {
    hal_lm_from_traces(&lm.forced_path(target), &lm_x.forced_path_cond(source, target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Wo,
    Lm,
    Both,
}

impl ScoreMethod {
    fn wants_wo(self) -> bool {
        matches!(self, ScoreMethod::Wo | ScoreMethod::Both)
    }

    fn wants_lm(self) -> bool {
        matches!(self, ScoreMethod::Lm | ScoreMethod::Both)
    }
}

/// Which score drives bucketing and filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Wo,
    Lm,
}

impl Scorer {
    pub fn get(self, e: &Example) -> Option<f64> {
        match self {
            Scorer::Wo => e.hal_wo,
            Scorer::Lm => e.hal_lm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scorer::Wo => "hal_wo",
            Scorer::Lm => "hal_lm",
        }
    }
}

/// Settings for training the LM pair used by the comparison scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct LmPairConfig {
    pub ngram: NgramConfig,
    pub k_copy: f64,
    pub copy_source: CopySource,
}

impl Default for LmPairConfig {
    fn default() -> Self {
        Self {
            ngram: NgramConfig::default(),
            k_copy: crate::cond::DEFAULT_K_COPY,
            copy_source: CopySource::Values,
        }
    }
}

/// Trains the unconditional LM on the targets and fits the conditional
/// model's global copy weight on the same examples.
pub fn train_lm_pair(
    examples: &[Example],
    config: &LmPairConfig,
) -> Result<(NgramModel, CopyMixtureModel), ScoreError> {
    let targets: Vec<TokenSeq> = examples.iter().map(Example::target_tokens).collect();
    let lm = train_ngram(&targets, &config.ngram)?;
    let init = CopyMixtureModel::new(lm.clone(), crate::cond::LAMBDA_INIT)?
        .with_k_copy(config.k_copy)?
        .with_copy_source(config.copy_source);
    let (lm_x, _) = init.fit(examples, false, false)?;
    Ok((lm, lm_x))
}

/// Fills `hal_wo` / `hal_lm` in place. Scores are computed in parallel and
/// written back in input order. Unscorable examples keep `None`.
pub fn score_corpus(
    examples: &mut [Example],
    method: ScoreMethod,
    models: Option<(&NgramModel, &CopyMixtureModel)>,
    include_fields: bool,
) -> Result<(), ScoreError> {
    if method.wants_wo() {
        let scores: Vec<Option<f64>> = examples
            .par_iter()
            .map(|e| score_word_overlap(&e.source, &e.target, include_fields))
            .collect();
        for (e, s) in examples.iter_mut().zip(scores) {
            e.hal_wo = s;
        }
    }
    if method.wants_lm() {
        let (lm, lm_x) = models.expect("LM scoring requires trained models");
        let scores: Vec<Result<f64, ScoreError>> = examples
            .par_iter()
            .map(|e| {
                score_lm_comparison(lm, lm_x, &linearize(&e.source, None), &e.target_tokens())
            })
            .collect();
        for (e, s) in examples.iter_mut().zip(scores) {
            e.hal_lm = Some(s?);
        }
    }
    Ok(())
}

/// Cross-fold LM scoring: example `i` belongs to fold `i % folds` and is
/// scored by models trained on the other folds.
pub fn score_lm_heldout(
    examples: &mut [Example],
    folds: usize,
    config: &LmPairConfig,
) -> Result<(), ScoreError> {
    if folds < 2 {
        return Err(ScoreError::BadFolds(folds));
    }
    for fold in 0..folds {
        let train: Vec<Example> = examples
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds != fold)
            .map(|(_, e)| e.clone())
            .collect();
        let (lm, lm_x) = train_lm_pair(&train, config)?;
        let idx: Vec<usize> = (0..examples.len()).filter(|i| i % folds == fold).collect();
        let scores: Vec<Result<f64, ScoreError>> = idx
            .par_iter()
            .map(|&i| {
                let e = &examples[i];
                score_lm_comparison(&lm, &lm_x, &linearize(&e.source, None), &e.target_tokens())
            })
            .collect();
        for (i, s) in idx.into_iter().zip(scores) {
            examples[i].hal_lm = Some(s?);
        }
    }
    Ok(())
}

/// Sidecar report written next to an annotated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub scorer: Scorer,
    pub bucketer: Bucketer,
    pub n_examples: usize,
    pub n_tagged: usize,
    pub bucket_sizes: [usize; NUM_TAGS],
    /// Ten equal-width bins over `[0, 1]`.
    pub score_histogram: [usize; 10],
    pub unscorable: Vec<String>,
}

pub fn histogram(scores: impl IntoIterator<Item = f64>) -> [usize; 10] {
    let mut h = [0; 10];
    for s in scores {
        h[((s * 10.0) as usize).min(9)] += 1;
    }
    h
}

/// Tags every example that has a score under `scorer`; examples without
/// one are left untagged and listed in the report.
pub fn annotate_with(
    examples: &mut [Example],
    scorer: Scorer,
    bucketer: Bucketer,
) -> AnnotationReport {
    let mut report = AnnotationReport {
        scorer,
        bucketer,
        n_examples: examples.len(),
        n_tagged: 0,
        bucket_sizes: [0; NUM_TAGS],
        score_histogram: [0; 10],
        unscorable: Vec::new(),
    };
    for e in examples.iter_mut() {
        match scorer.get(e) {
            Some(s) => {
                let tag = bucketer.assign(s);
                e.tag = Some(tag);
                report.n_tagged += 1;
                report.bucket_sizes[tag.level() as usize] += 1;
            }
            None => {
                e.tag = None;
                report.unscorable.push(e.id.clone());
            }
        }
    }
    report.score_histogram = histogram(examples.iter().filter_map(|e| scorer.get(e)));
    report
}

/// Scores (when needed), buckets and tags a corpus. LM scores come from
/// `models` or, when absent, from an LM pair trained on the corpus itself.
pub fn annotate_corpus(
    examples: &mut [Example],
    scorer: Scorer,
    mode: BucketMode,
    models: Option<(&NgramModel, &CopyMixtureModel)>,
    include_fields: bool,
) -> Result<AnnotationReport, ScoreError> {
    match scorer {
        Scorer::Wo => score_corpus(examples, ScoreMethod::Wo, None, include_fields)?,
        Scorer::Lm => match models {
            Some(m) => score_corpus(examples, ScoreMethod::Lm, Some(m), include_fields)?,
            None => {
                let (lm, lm_x) = train_lm_pair(examples, &LmPairConfig::default())?;
                score_corpus(examples, ScoreMethod::Lm, Some((&lm, &lm_x)), include_fields)?
            }
        },
    }
    let scores: Vec<f64> = examples.iter().filter_map(|e| scorer.get(e)).collect();
    let bucketer = make_bucketer(&scores, mode)?;
    Ok(annotate_with(examples, scorer, bucketer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond::CopyWeights;
    use proptest::prelude::*;

    fn tag(l: u8) -> HallucinationTag {
        HallucinationTag::new(l).unwrap()
    }

    #[test]
    fn tag_parsing_and_rendering() {
        assert_eq!("hal_3".parse::<HallucinationTag>().unwrap(), tag(3));
        assert_eq!("<hal_0>".parse::<HallucinationTag>().unwrap(), tag(0));
        assert!("hal_5".parse::<HallucinationTag>().is_err());
        assert!("hal_10".parse::<HallucinationTag>().is_err());
        assert!("noise".parse::<HallucinationTag>().is_err());
        assert_eq!(tag(4).token(), "<hal_4>");
        assert_eq!(tag(4).to_string(), "hal_4");
        assert_eq!(serde_json::to_string(&tag(2)).unwrap(), "\"hal_2\"");
    }

    #[test]
    fn word_overlap_hand_oracle() {
        let t = Table::new([("name", "john smith"), ("born", "1950"), ("occupation", "writer")]);
        assert_eq!(score_word_overlap(&t, "john smith is a french writer", false), Some(0.5));
        assert_eq!(score_word_overlap(&t, "writer , john .", false), Some(0.0));
        assert_eq!(score_word_overlap(&t, "a keen gardener", false), Some(1.0));
        assert_eq!(score_word_overlap(&t, "...", false), None);
        // field names only count when asked for
        assert_eq!(score_word_overlap(&t, "occupation", false), Some(1.0));
        assert_eq!(score_word_overlap(&t, "occupation", true), Some(0.0));
    }

    fn trace(gold: &[&str], probs: &[f64], hits: &[bool]) -> ForcedPathTrace {
        let mut tr = ForcedPathTrace::with_capacity(gold.len());
        for ((g, p), h) in gold.iter().zip(probs).zip(hits) {
            tr.record(g, *p, if *h { g } else { "other" }, *h);
        }
        tr
    }

    #[test]
    fn eq2_counts_only_wrong_and_lm_preferred_positions() {
        let gold = ["a", "b", "c", "</s>"];
        let lm = trace(&gold, &[0.5, 0.3, 0.2, 0.9], &[true; 4]);
        let lm_x = trace(&gold, &[0.6, 0.1, 0.1, 0.8], &[true, false, true, true]);
        assert_eq!(hal_lm_from_traces(&lm, &lm_x).unwrap(), 0.25);

        let all_right = trace(&gold, &[0.01; 4], &[true; 4]);
        assert_eq!(hal_lm_from_traces(&lm, &all_right).unwrap(), 0.0);

        let tie = trace(&gold, &[0.5, 0.3, 0.2, 0.9], &[false; 4]);
        assert_eq!(hal_lm_from_traces(&lm, &tie).unwrap(), 0.0);

        let short = trace(&gold[..3], &[0.1; 3], &[true; 3]);
        assert!(matches!(
            hal_lm_from_traces(&lm, &short),
            Err(ScoreError::TraceMismatch { .. })
        ));
    }

    #[test]
    fn lm_comparison_flags_unsupported_nationality() {
        // Base LM sees nationalities before occupations; the source lists
        // only the occupation.
        let lines = [
            "ana lee is a french writer .",
            "bo kim is a german painter .",
            "cy ray is a french singer .",
            "di fox is a dutch writer .",
            "ed joy is a german actor .",
            "flo ash is a writer .",
            "gus oak is a painter .",
            "hu elm is a writer .",
            "ivy ng is a singer .",
            "jo bay is a painter .",
        ];
        let mut examples: Vec<Example> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let toks: Vec<&str> = l.split(' ').collect();
                let mut rows = vec![("name", format!("{} {}", toks[0], toks[1]))];
                rows.push(("occupation", toks[toks.len() - 2].to_string()));
                Example::new(i.to_string(), Table::new(rows), *l)
            })
            .collect();
        let (lm, lm_x) = train_lm_pair(&examples, &LmPairConfig::default()).unwrap();
        let source = linearize(&Table::new([("name", "hal ito"), ("occupation", "writer")]), None);
        let target = tokenize("hal ito is a french writer .");
        let lm_trace = lm.forced_path(&target);
        let x_trace = lm_x.forced_path_cond(&source, &target);
        let french = 4;
        assert_eq!(x_trace.gold_tokens[french], "french");
        assert!(!x_trace.argmax_hit[french]);
        assert!(lm_trace.gold_prob[french] > x_trace.gold_prob[french]);
        let score = score_lm_comparison(&lm, &lm_x, &source, &target).unwrap();
        assert!(score > 0.0);

        score_corpus(&mut examples, ScoreMethod::Both, Some((&lm, &lm_x)), false).unwrap();
        assert!(examples.iter().all(|e| e.hal_wo.is_some() && e.hal_lm.is_some()));
    }

    #[test]
    fn lm_comparison_matches_position_scan() {
        let lines = ["x y z .", "x z y .", "y y x .", "z x ."];
        let examples: Vec<Example> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| Example::new(i.to_string(), Table::new([("f", "x")]), *l))
            .collect();
        let (lm, lm_x) = train_lm_pair(&examples, &LmPairConfig::default()).unwrap();
        let lm_x = lm_x
            .with_weights(CopyWeights { global: 0.4, per_tag: None })
            .unwrap();
        let source = linearize(&Table::new([("f", "y q")]), None);
        let target = tokenize("x q y z w .");
        let mut fired = 0;
        let mut ids_prefix: Vec<String> = Vec::new();
        let n = target.len() + 1;
        for t in 0..n {
            let prefix = TokenSeq::from_tokens(ids_prefix.clone());
            let gold = target.get(t).cloned().unwrap_or_else(|| "</s>".into());
            let p_lm = lm.prob(&prefix, &gold);
            let (ctx, d) = lm_x.next_distribution_cond(&source, &prefix, None);
            let gid = ctx.id(&lm_x.base, &gold) as usize;
            let best = crate::ngram::argmax(&d);
            if best != gid && p_lm > d[gid] {
                fired += 1;
            }
            ids_prefix.push(gold);
        }
        let score = score_lm_comparison(&lm, &lm_x, &source, &target).unwrap();
        assert_eq!(score, fired as f64 / n as f64);
    }

    #[test]
    fn fixed_buckets() {
        let b = make_bucketer(&[], BucketMode::Fixed).unwrap();
        assert_eq!(b.boundaries, [0.2, 0.4, 0.6, 0.8]);
        let got: Vec<u8> = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|s| assign_tag(&b, *s).level())
            .collect();
        assert_eq!(got, [0, 1, 2, 3, 4, 4]);
        assert_eq!(assign_tag(&b, 0.199).level(), 0);
    }

    #[test]
    fn quantile_buckets_on_ten_scores() {
        let scores: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let b = make_bucketer(&scores, BucketMode::Quantile).unwrap();
        let mut sizes = [0; NUM_TAGS];
        for s in &scores {
            sizes[b.assign(*s).level() as usize] += 1;
        }
        assert_eq!(sizes, [2; NUM_TAGS]);
    }

    #[test]
    fn degenerate_quantiles_put_everything_in_hal_0() {
        for v in [0.0, 0.3, 1.0] {
            let b = make_bucketer(&[v; 7], BucketMode::Quantile).unwrap();
            assert_eq!(b.assign(v).level(), 0);
        }
        assert!(matches!(
            make_bucketer(&[0.1, 0.2], BucketMode::Quantile),
            Err(ScoreError::TooFewScores(2))
        ));
        assert!(make_bucketer(&[], BucketMode::Quantile).is_err());
    }

    #[test]
    fn annotate_clean_copies_as_hal_0() {
        let mut ex: Vec<Example> = (0..6)
            .map(|i| {
                Example::new(
                    i.to_string(),
                    Table::new([("name", format!("n{i} smith")), ("job", "writer".into())]),
                    format!("n{i} smith , writer ."),
                )
            })
            .collect();
        ex.push(Example::new("empty", Table::new([("a", "b")]), "?!"));
        let report = annotate_corpus(&mut ex, Scorer::Wo, BucketMode::Fixed, None, false).unwrap();
        assert_eq!(report.bucket_sizes, [6, 0, 0, 0, 0]);
        assert_eq!(report.unscorable, ["empty"]);
        assert!(ex[..6].iter().all(|e| e.tag == Some(tag(0))));
        assert_eq!(ex[6].tag, None);
        assert_eq!(ex[0].linearize().tokens[0], "<hal_0>");
    }

    #[test]
    fn quantile_annotation_balances_distinct_scores() {
        let mut ex: Vec<Example> = (0..23)
            .map(|i| {
                let mut e = Example::new(i.to_string(), Table::new([("a", "b")]), "x");
                e.hal_wo = Some((i * 7 % 23) as f64 / 23.0);
                e
            })
            .collect();
        let scores: Vec<f64> = ex.iter().filter_map(|e| e.hal_wo).collect();
        let b = make_bucketer(&scores, BucketMode::Quantile).unwrap();
        let report = annotate_with(&mut ex, Scorer::Wo, b);
        let target = 23.0 / 5.0;
        for s in report.bucket_sizes {
            assert!((s as f64 - target).abs() <= 1.0, "{:?}", report.bucket_sizes);
        }
    }

    proptest! {
        #[test]
        fn tags_are_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, seed in proptest::collection::vec(0.0f64..=1.0, 5..40)) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for bucketer in [Bucketer::fixed(), make_bucketer(&seed, BucketMode::Quantile).unwrap()] {
                prop_assert!(bucketer.assign(lo) <= bucketer.assign(hi));
                prop_assert!(bucketer.boundaries.windows(2).all(|w| w[0] <= w[1]));
            }
        }

        #[test]
        fn overlap_score_bounds(words in proptest::collection::vec("[a-e]{1,2}", 1..8), src in proptest::collection::vec("[a-e]{1,2}", 0..8)) {
            let t = Table::new(src.iter().enumerate().map(|(i, v)| (format!("f{i}"), v.clone())));
            let target = words.join(" ");
            let s = score_word_overlap(&t, &target, false).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let wy = word_set(&tokenize(&target));
            let wx = source_word_set(&t, false);
            prop_assert_eq!(s == 0.0, wy.is_subset(&wx));
            prop_assert_eq!(s == 1.0, wy.is_disjoint(&wx));
        }
    }
}
