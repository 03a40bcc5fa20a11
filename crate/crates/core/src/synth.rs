//! Synthetic biography corpus with per-token ground-truth support labels,
//! and a report comparing scores against that ground truth.
//!
//! Targets are telegraphic: value tokens joined by `,` and closed by `.`,
//! so a clean target uses no word outside its table. Cities belong to
//! countries and club lists imply footballers, which lets inference
//! examples state facts the table leaves out.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Example, SupportLabel, Table};
use crate::eval::FUNCTION_WORDS;
use crate::halscore::Scorer;

const POOL_SEED: u64 = 0x0068_616c_6b6e_6f62;

pub const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];
const MONTH_ABBREV: [&str; 12] = [
    "jan", "feb", "mar", "apr", "mai", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];

/// Occupations and the synonym used when paraphrasing. The first entry is
/// the one implied by a club list.
pub const OCCUPATIONS: [(&str, &str); 16] = [
    ("footballer", "player"),
    ("writer", "author"),
    ("painter", "artist"),
    ("singer", "vocalist"),
    ("actor", "performer"),
    ("politician", "statesman"),
    ("architect", "designer"),
    ("poet", "versifier"),
    ("composer", "songwriter"),
    ("engineer", "technician"),
    ("lawyer", "attorney"),
    ("physician", "doctor"),
    ("sculptor", "carver"),
    ("chemist", "scientist"),
    ("historian", "chronicler"),
    ("journalist", "reporter"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Name,
    BirthDate,
    BirthPlace,
    Nationality,
    Occupation,
    Clubs,
    DeathYear,
}

impl FieldKind {
    pub fn all() -> Vec<FieldKind> {
        use FieldKind::*;
        vec![Name, BirthDate, BirthPlace, Nationality, Occupation, Clubs, DeathYear]
    }

    pub fn key(self) -> &'static str {
        match self {
            FieldKind::Name => "name",
            FieldKind::BirthDate => "birth_date",
            FieldKind::BirthPlace => "birth_place",
            FieldKind::Nationality => "nationality",
            FieldKind::Occupation => "occupation",
            FieldKind::Clubs => "clubs",
            FieldKind::DeathYear => "death_year",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub seed: u64,
    pub noise_rate: f64,
    pub paraphrase_rate: f64,
    pub inference_rate: f64,
    pub schema: Vec<FieldKind>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_examples: 1000,
            seed: 7,
            noise_rate: 0.3,
            paraphrase_rate: 0.0,
            inference_rate: 0.0,
            schema: FieldKind::all(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("schema has no fields")]
    EmptySchema,
    #[error("{0} = {1} is outside [0, 1]")]
    BadRate(&'static str, f64),
    #[error("n_examples must be at least 1")]
    NoExamples,
    #[error("example {0:?} has no gold support labels")]
    MissingGold(String),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.schema.is_empty() {
            return Err(SynthError::EmptySchema);
        }
        if self.n_examples == 0 {
            return Err(SynthError::NoExamples);
        }
        for (name, r) in [
            ("noise_rate", self.noise_rate),
            ("paraphrase_rate", self.paraphrase_rate),
            ("inference_rate", self.inference_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::BadRate(name, r));
            }
        }
        Ok(())
    }

    fn has(&self, f: FieldKind) -> bool {
        self.schema.contains(&f)
    }
}

/// Pseudo-word vocabularies shared by every corpus.
struct Pools {
    first: Vec<String>,
    last: Vec<String>,
    /// (city, country index)
    cities: Vec<(String, usize)>,
    nationalities: Vec<String>,
    clubs: Vec<String>,
    noise: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
    ];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
    const CODAS: [&str; 5] = ["", "", "n", "r", "s"];
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

impl Pools {
    fn build() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(POOL_SEED);
        let mut taken: BTreeSet<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        taken.extend(MONTHS.iter().chain(&MONTH_ABBREV).map(|s| s.to_string()));
        for (o, s) in OCCUPATIONS {
            taken.insert(o.to_string());
            taken.insert(s.to_string());
        }
        let mut draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..n).map(|_| pseudo_word(rng, &mut taken)).collect()
        };
        let first = draw(150, &mut rng);
        let last = draw(300, &mut rng);
        let nationalities = draw(12, &mut rng);
        let cities = draw(60, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, i % 12))
            .collect();
        let clubs = draw(40, &mut rng);
        let noise = draw(400, &mut rng);
        Self {
            first,
            last,
            cities,
            nationalities,
            clubs,
            noise,
        }
    }
}

/// One target unit: tokens and their labels, without separators.
type Unit = Vec<(String, SupportLabel)>;

fn unit(tokens: &[String], label: SupportLabel) -> Unit {
    tokens.iter().map(|t| (t.clone(), label)).collect()
}

/// Orders of the middle units (birth, place, death) and whether the name
/// comes first or second.
const TEMPLATES: [([usize; 3], bool); 12] = [
    ([0, 1, 2], true),
    ([0, 2, 1], true),
    ([1, 0, 2], true),
    ([1, 2, 0], true),
    ([2, 0, 1], true),
    ([2, 1, 0], true),
    ([0, 1, 2], false),
    ([0, 2, 1], false),
    ([1, 0, 2], false),
    ([1, 2, 0], false),
    ([2, 0, 1], false),
    ([2, 1, 0], false),
];

struct Draft {
    table: Vec<(String, String)>,
    units: Vec<Unit>,
}

fn split(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

fn draft(cfg: &SynthConfig, pools: &Pools, rng: &mut ChaCha8Rng) -> Draft {
    let inference = cfg.inference_rate > 0.0
        && [
            FieldKind::BirthPlace,
            FieldKind::Nationality,
            FieldKind::Occupation,
            FieldKind::Clubs,
        ]
        .iter()
        .all(|f| cfg.has(*f))
        && rng.gen_bool(cfg.inference_rate);
    let paraphrase = cfg.paraphrase_rate > 0.0 && rng.gen_bool(cfg.paraphrase_rate);
    // 0: month only, 1: occupation only, 2: both
    let what = rng.gen_range(0..3);

    let name = format!(
        "{} {}",
        pools.first.choose(rng).unwrap(),
        pools.last.choose(rng).unwrap()
    );
    let month = rng.gen_range(0..12);
    let year: u32 = rng.gen_range(1850..2000);
    let birth = format!("{} {} {}", rng.gen_range(1..=28), MONTHS[month], year);
    let (city, country) = pools.cities.choose(rng).unwrap().clone();
    let nationality = pools.nationalities[country].clone();
    let footballer = inference || (cfg.has(FieldKind::Clubs) && rng.gen_bool(0.3));
    let occ = if footballer {
        0
    } else {
        rng.gen_range(1..OCCUPATIONS.len())
    };
    let n_clubs = rng.gen_range(1..=3);
    let clubs: Vec<String> = pools
        .clubs
        .choose_multiple(rng, n_clubs)
        .cloned()
        .collect();
    let death = (year + rng.gen_range(40..90)).to_string();

    let present = |f: FieldKind, p: f64, rng: &mut ChaCha8Rng| cfg.has(f) && rng.gen_bool(p);
    let has_place = cfg.has(FieldKind::BirthPlace) && (inference || rng.gen_bool(0.8));
    let has_nat = cfg.has(FieldKind::Nationality) && (has_place || rng.gen_bool(0.9));
    let has_death = present(FieldKind::DeathYear, 0.4, rng);
    // how much of the table the target verbalizes
    let verbosity: f64 = rng.gen_range(0.3..1.0);
    let mention = |rng: &mut ChaCha8Rng| inference || rng.gen_bool(verbosity);

    let mut table = Vec::new();
    let mut push = |f: FieldKind, v: String| table.push((f.key().to_string(), v));
    if cfg.has(FieldKind::Name) {
        push(FieldKind::Name, name.clone());
    }
    if cfg.has(FieldKind::BirthDate) {
        push(FieldKind::BirthDate, birth.clone());
    }
    if has_place {
        push(FieldKind::BirthPlace, city.clone());
    }
    if has_nat && !inference {
        push(FieldKind::Nationality, nationality.clone());
    }
    if cfg.has(FieldKind::Occupation) && !inference {
        push(FieldKind::Occupation, OCCUPATIONS[occ].0.to_string());
    }
    if footballer {
        push(FieldKind::Clubs, clubs.join(" "));
    }
    if has_death {
        push(FieldKind::DeathYear, death.clone());
    }

    use SupportLabel::*;
    let birth_unit = cfg.has(FieldKind::BirthDate).then(|| {
        let mut u = unit(&split(&birth), Supported);
        if paraphrase && what != 1 {
            u[1].0 = MONTH_ABBREV[month].to_string();
        }
        u
    });
    let place_unit = (has_place && mention(rng)).then(|| {
        let mut u = unit(&[city], Supported);
        if inference {
            u.push((",".into(), Inferable));
            u.push((nationality.clone(), Inferable));
        } else if has_nat {
            u.push((",".into(), Supported));
            u.push((nationality.clone(), Supported));
        }
        u
    });
    let death_unit = (has_death && mention(rng)).then(|| unit(&[death], Supported));
    let name_unit = cfg.has(FieldKind::Name).then(|| unit(&split(&name), Supported));

    let (order, name_first) = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let middle = [birth_unit, place_unit, death_unit];
    let mut units: Vec<Unit> = order.iter().filter_map(|&i| middle[i].clone()).collect();
    if let Some(n) = name_unit {
        let at = if name_first { 0 } else { units.len().min(1) };
        units.insert(at, n);
    }
    if footballer && mention(rng) {
        for c in &clubs {
            units.push(unit(std::slice::from_ref(c), Supported));
        }
    }
    if cfg.has(FieldKind::Occupation) {
        let label = if inference { Inferable } else { Supported };
        let word = if paraphrase && !inference && (what != 0 || !cfg.has(FieldKind::BirthDate)) {
            OCCUPATIONS[occ].1
        } else {
            OCCUPATIONS[occ].0
        };
        units.push(vec![(word.to_string(), label)]);
    }
    Draft { table, units }
}

fn value_len(d: &Draft) -> usize {
    d.units.iter().map(Vec::len).sum()
}

/// Joins units with `,`, inserting noise spans after separators, and
/// closes with `.`.
fn render(
    d: &Draft,
    noise: &[Vec<String>],
    rng: &mut ChaCha8Rng,
) -> Vec<(String, SupportLabel)> {
    let gaps = d.units.len().saturating_sub(1).max(1);
    let mut at: Vec<Vec<&Vec<String>>> = vec![Vec::new(); gaps];
    for span in noise {
        at[rng.gen_range(0..gaps)].push(span);
    }
    let mut out = Vec::new();
    for (i, u) in d.units.iter().enumerate() {
        out.extend(u.iter().cloned());
        if i + 1 < d.units.len() || (d.units.len() == 1 && !noise.is_empty()) {
            out.push((",".to_string(), SupportLabel::Supported));
            for span in &at[i.min(gaps - 1)] {
                out.extend(span.iter().map(|w| (w.clone(), SupportLabel::Unsupported)));
                out.push((",".to_string(), SupportLabel::Unsupported));
            }
        }
    }
    out.push((".".to_string(), SupportLabel::Supported));
    out
}

fn noise_spans(n_words: usize, pools: &Pools, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut spans = Vec::new();
    let mut left = n_words;
    while left > 0 {
        let len = rng.gen_range(1..=4).min(left);
        spans.push((0..len).map(|_| pools.noise.choose(rng).unwrap().clone()).collect());
        left -= len;
    }
    spans
}

fn stream(seed: u64, index: usize, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * 2 + which);
    rng
}

/// Builds the corpus. Example `i` draws from its own random streams, so
/// the output does not depend on thread scheduling.
///
/// A target is noisy with probability `1 - (1 - noise_rate)^w`, where
/// `w = len² / mean(len²)` and `len` counts its value tokens: longer
/// targets are noisier, as in scraped corpora. A noisy target's noise share is uniform in [0.05, 0.9].
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<Example>, SynthError> {
    cfg.validate()?;
    let pools = Pools::build();
    let drafts: Vec<Draft> = (0..cfg.n_examples)
        .into_par_iter()
        .map(|i| draft(cfg, &pools, &mut stream(cfg.seed, i, 0)))
        .collect();
    let sq = |d: &Draft| (value_len(d) * value_len(d)) as f64;
    let mean = drafts.iter().map(sq).sum::<f64>() / drafts.len() as f64;
    let examples = drafts
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = stream(cfg.seed, i, 1);
            let len = value_len(d);
            let p = 1.0 - (1.0 - cfg.noise_rate).powf(sq(d) / mean);
            let spans = if cfg.noise_rate > 0.0 && rng.gen_bool(p.clamp(0.0, 1.0)) {
                let share: f64 = rng.gen_range(0.05..0.9);
                let n = ((share / (1.0 - share)) * len as f64).round().max(1.0) as usize;
                noise_spans(n, &pools, &mut rng)
            } else {
                Vec::new()
            };
            let tokens = render(d, &spans, &mut rng);
            let target = tokens.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(" ");
            let mut e = Example::new(
                format!("syn-{i}"),
                Table::new(d.table.iter().map(|(f, v)| (f.as_str(), v.as_str()))),
                target,
            );
            e.gold_support = Some(tokens.iter().map(|(_, l)| l.is_supported()).collect());
            e.support_labels = Some(tokens.into_iter().map(|(_, l)| l).collect());
            e
        })
        .collect();
    Ok(examples)
}

/// Whether an example's only departures from its table are inferable
/// tokens.
pub fn is_inference_only(e: &Example) -> bool {
    e.support_labels.as_ref().is_some_and(|l| {
        l.contains(&SupportLabel::Inferable) && !l.contains(&SupportLabel::Unsupported)
    })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Area under the ROC curve via the Mann-Whitney statistic; ties count
/// half. `None` without both classes.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let ranks = average_ranks(scores);
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub threshold: f64,
    /// `None` when nothing scores above the threshold.
    pub precision: Option<f64>,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub scorer: Scorer,
    pub n: usize,
    pub spearman: f64,
    /// Spearman was undefined (constant scores or labels) and reported as 0.
    pub spearman_undefined: bool,
    pub auc: Option<f64>,
    pub detection: Vec<DetectionPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceContrast {
    pub n: usize,
    pub mean_hal_wo: f64,
    pub mean_hal_lm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerReport {
    pub methods: Vec<MethodReport>,
    pub inference_only: Option<InferenceContrast>,
}

fn method_report(scorer: Scorer, pairs: &[(f64, f64)]) -> MethodReport {
    let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rho = spearman(&scores, &truth);
    let positive: Vec<bool> = truth.iter().map(|t| *t > 0.0).collect();
    let n_pos = positive.iter().filter(|p| **p).count();
    let detection = (0..20)
        .map(|i| {
            let threshold = i as f64 * 0.05;
            let flagged: Vec<bool> = scores.iter().map(|s| *s > threshold).collect();
            let tp = flagged.iter().zip(&positive).filter(|(f, p)| **f && **p).count();
            let n_flagged = flagged.iter().filter(|f| **f).count();
            DetectionPoint {
                threshold,
                precision: (n_flagged > 0).then(|| tp as f64 / n_flagged as f64),
                recall: if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 },
            }
        })
        .collect();
    MethodReport {
        scorer,
        n: pairs.len(),
        spearman: rho.unwrap_or(0.0),
        spearman_undefined: rho.is_none(),
        auc: roc_auc(&scores, &positive),
        detection,
    }
}

/// Compares each available score with the true noise fraction. Examples
/// without a given score are left out of that score's statistics.
pub fn scorer_report(examples: &[Example]) -> Result<ScorerReport, SynthError> {
    let mut truth = Vec::with_capacity(examples.len());
    for e in examples {
        truth.push(
            e.true_noise_fraction()
                .ok_or_else(|| SynthError::MissingGold(e.id.clone()))?,
        );
    }
    let mut methods = Vec::new();
    for scorer in [Scorer::Wo, Scorer::Lm] {
        let pairs: Vec<(f64, f64)> = examples
            .iter()
            .zip(&truth)
            .filter_map(|(e, t)| scorer.get(e).map(|s| (s, *t)))
            .collect();
        if !pairs.is_empty() {
            methods.push(method_report(scorer, &pairs));
        }
    }
    let both: Vec<(f64, f64)> = examples
        .iter()
        .filter(|e| is_inference_only(e))
        .filter_map(|e| Some((e.hal_wo?, e.hal_lm?)))
        .collect();
    let inference_only = (!both.is_empty()).then(|| {
        let n = both.len() as f64;
        InferenceContrast {
            n: both.len(),
            mean_hal_wo: both.iter().map(|p| p.0).sum::<f64>() / n,
            mean_hal_lm: both.iter().map(|p| p.1).sum::<f64>() / n,
        }
    });
    Ok(ScorerReport {
        methods,
        inference_only,
    })
}
