use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use halknob_core::cond::{CopyMixtureModel, CopySource, LAMBDA_INIT};
use halknob_core::corpus::{read_corpus, write_corpus, Example};
use halknob_core::eval::{evaluate, EvalReport};
use halknob_core::generate::{filter_clean, generate_batch, train_controlled, GenerationConfig, Strategy};
use halknob_core::halscore::{
    annotate_with, make_bucketer, score_corpus, score_lm_heldout, train_lm_pair, BucketMode, Bucketer,
    HallucinationTag, LmPairConfig, ScoreMethod, Scorer,
};
use halknob_core::model_io::{load_cond, load_ngram, save_cond, save_ngram};
use halknob_core::ngram::{train_ngram, NgramConfig};
use halknob_core::synth::{generate_corpus, FieldKind, SynthConfig};
use halknob_core::tokenizer::{tokenize, TokenSeq};
use log::info;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, Kind};
use crate::manifest::{write_json, Manifest};

pub const SEED_ENV: &str = "HALKNOB_SEED";

/// The flag value unless HALKNOB_SEED is set.
pub fn effective_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(CliError::usage(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::TrainLm(a) => train_lm(a),
        Command::FitCond(a) => fit_cond(a),
        Command::Score(a) => score(a),
        Command::Bucket(a) => bucket(a),
        Command::Annotate(a) => annotate(a),
        Command::Filter(a) => filter(a),
        Command::TrainControlled(a) => train_ctrl(a),
        Command::Generate(a) => generate(a),
        Command::KnobSweep(a) => knob_sweep(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    }
}

fn load_corpus(path: &Path, m: &mut Manifest) -> Result<Vec<Example>, CliError> {
    m.input(path)?;
    let examples = read_corpus(path)?;
    info!("read {} examples from {}", examples.len(), path.display());
    Ok(examples)
}

fn load_lm(path: &Path, m: &mut Manifest) -> Result<halknob_core::ngram::NgramModel, CliError> {
    m.input(path)?;
    load_ngram(path).map_err(|e| CliError::model(path, e))
}

fn load_cond_model(path: &Path, m: &mut Manifest) -> Result<CopyMixtureModel, CliError> {
    m.input(path)?;
    load_cond(path).map_err(|e| CliError::model(path, e))
}

fn save_corpus(path: &Path, examples: &[Example], m: &mut Manifest) -> Result<(), CliError> {
    write_corpus(path, examples)?;
    m.output(path);
    info!("wrote {} examples to {}", examples.len(), path.display());
    Ok(())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn ngram_config(a: &NgramArgs) -> Result<NgramConfig, CliError> {
    let k = match a.k.as_slice() {
        [k] => vec![*k; a.order],
        ks => ks.to_vec(),
    };
    let cfg = NgramConfig {
        order: a.order,
        k,
        min_count: a.min_count,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn copy_source(a: CopySourceArg) -> CopySource {
    match a {
        CopySourceArg::Values => CopySource::Values,
        CopySourceArg::ValuesAndFields => CopySource::ValuesAndFields,
    }
}

fn scorer(a: ScorerArg) -> Scorer {
    match a {
        ScorerArg::Wo => Scorer::Wo,
        ScorerArg::Lm => Scorer::Lm,
    }
}

fn bucket_mode(a: BucketModeArg) -> BucketMode {
    match a {
        BucketModeArg::Fixed => BucketMode::Fixed,
        BucketModeArg::Quantile => BucketMode::Quantile,
    }
}

fn parse_schema(names: &[String]) -> Result<Vec<FieldKind>, CliError> {
    if names.is_empty() {
        return Ok(FieldKind::all());
    }
    names
        .iter()
        .map(|n| {
            FieldKind::all()
                .into_iter()
                .find(|f| f.key() == n.trim())
                .ok_or_else(|| CliError::usage(format!("unknown schema field {n:?}")))
        })
        .collect()
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let seed = effective_seed(a.seed)?;
    let mut m = Manifest::new("synth", a, Some(seed));
    let cfg = SynthConfig {
        n_examples: a.n_examples,
        seed,
        noise_rate: a.noise_rate,
        paraphrase_rate: a.paraphrase_rate,
        inference_rate: a.inference_rate,
        schema: parse_schema(&a.schema)?,
    };
    let examples = generate_corpus(&cfg)?;
    save_corpus(&a.out, &examples, &mut m)?;
    m.write()?;
    Ok(())
}

fn train_lm(a: &TrainLmArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("train-lm", a, None);
    let cfg = ngram_config(&a.ngram)?;
    let examples = load_corpus(&a.corpus, &mut m)?;
    let targets: Vec<TokenSeq> = examples.iter().map(Example::target_tokens).collect();
    let lm = train_ngram(&targets, &cfg)?;
    info!("vocabulary of {} tokens", lm.vocab().len());
    save_ngram(&lm, &a.out).map_err(|e| CliError::model(&a.out, e))?;
    m.output(&a.out);
    m.write()?;
    Ok(())
}

fn fit_cond(a: &FitCondArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("fit-cond", a, None);
    let examples = load_corpus(&a.corpus, &mut m)?;
    let base = load_lm(&a.lm, &mut m)?;
    let init = CopyMixtureModel::new(base, LAMBDA_INIT)?
        .with_k_copy(a.k_copy)?
        .with_copy_source(copy_source(a.copy_source));
    let (model, report) = init.fit(&examples, a.per_tag, false)?;
    info!("copy weights {:?}", model.weights);
    save_cond(&model, &a.out).map_err(|e| CliError::model(&a.out, e))?;
    m.output(&a.out);
    let report_path = sidecar(&a.out, "fit.json");
    write_json(&report_path, &report)?;
    m.output(&report_path);
    m.write()?;
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("score", a, None);
    let mut examples = load_corpus(&a.corpus, &mut m)?;
    let method = match a.method {
        MethodArg::Wo => ScoreMethod::Wo,
        MethodArg::Lm => ScoreMethod::Lm,
        MethodArg::Both => ScoreMethod::Both,
    };
    if method != ScoreMethod::Lm {
        score_corpus(&mut examples, ScoreMethod::Wo, None, a.include_fields)?;
    }
    if method != ScoreMethod::Wo {
        let pair = LmPairConfig {
            ngram: ngram_config(&a.ngram)?,
            ..LmPairConfig::default()
        };
        if let Some(folds) = a.heldout_folds {
            score_lm_heldout(&mut examples, folds, &pair)?;
        } else {
            let (lm, lm_x) = match (&a.lm, &a.lmx) {
                (Some(lm), Some(lmx)) => (load_lm(lm, &mut m)?, load_cond_model(lmx, &mut m)?),
                _ => train_lm_pair(&examples, &pair)?,
            };
            score_corpus(&mut examples, ScoreMethod::Lm, Some((&lm, &lm_x)), a.include_fields)?;
        }
    }
    save_corpus(&a.out, &examples, &mut m)?;
    m.write()?;
    Ok(())
}

fn scores_for(examples: &[Example], s: Scorer) -> Vec<f64> {
    examples.iter().filter_map(|e| s.get(e)).collect()
}

fn bucket(a: &BucketArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("bucket", a, None);
    let examples = load_corpus(&a.corpus, &mut m)?;
    let scores = scores_for(&examples, scorer(a.scorer));
    if scores.is_empty() {
        return Err(CliError::data(format!(
            "no example in {} has a {} score",
            a.corpus.display(),
            scorer(a.scorer).name()
        )));
    }
    let bucketer = make_bucketer(&scores, bucket_mode(a.bucket_mode))?;
    write_json(&a.out, &bucketer)?;
    m.output(&a.out);
    m.write()?;
    Ok(())
}

fn annotate(a: &AnnotateArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("annotate", a, None);
    let mut examples = load_corpus(&a.corpus, &mut m)?;
    let s = scorer(a.scorer);
    let bucketer: Bucketer = match &a.bucketer {
        Some(path) => {
            m.input(path)?;
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::json(path, e))?
        }
        None => make_bucketer(&scores_for(&examples, s), bucket_mode(a.bucket_mode))?,
    };
    let report = annotate_with(&mut examples, s, bucketer);
    if report.n_tagged == 0 {
        return Err(CliError::data(format!("no example has a {} score", s.name())));
    }
    info!("bucket sizes {:?}", report.bucket_sizes);
    save_corpus(&a.out, &examples, &mut m)?;
    let report_path = sidecar(&a.out, "report.json");
    write_json(&report_path, &report)?;
    m.output(&report_path);
    m.write()?;
    Ok(())
}

fn filter(a: &FilterArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("filter", a, None);
    let examples = load_corpus(&a.corpus, &mut m)?;
    let kept = filter_clean(&examples, a.keep, scorer(a.by))?;
    save_corpus(&a.out, &kept, &mut m)?;
    m.write()?;
    Ok(())
}

fn train_ctrl(a: &TrainControlledArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("train-controlled", a, None);
    let examples = load_corpus(&a.corpus, &mut m)?;
    let base = load_lm(&a.lm, &mut m)?;
    let init = CopyMixtureModel::new(base, LAMBDA_INIT)?
        .with_k_copy(a.k_copy)?
        .with_copy_source(copy_source(a.copy_source));
    let (model, report) = train_controlled(&init, &examples)?;
    if !report.inherited.is_empty() {
        log::warn!("tags without examples use the global weight: {:?}", report.inherited);
    }
    info!("copy weights {:?}", model.weights);
    save_cond(&model, &a.out).map_err(|e| CliError::model(&a.out, e))?;
    m.output(&a.out);
    let report_path = sidecar(&a.out, "fit.json");
    write_json(&report_path, &report)?;
    m.output(&report_path);
    m.write()?;
    Ok(())
}

fn parse_tag(s: &str) -> Result<Option<HallucinationTag>, CliError> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    s.parse().map(Some).map_err(CliError::from)
}

fn tag_name(tag: Option<HallucinationTag>) -> String {
    tag.map_or_else(|| "none".to_string(), |t| t.to_string())
}

fn generation_config(d: &DecodeArgs, tag: Option<HallucinationTag>, seed: u64) -> Result<GenerationConfig, CliError> {
    let strategy = match d.strategy {
        StrategyArg::Greedy => Strategy::Greedy,
        StrategyArg::Beam => Strategy::Beam { width: d.beam_width },
        StrategyArg::Sample => Strategy::Sample {
            temperature: d.temperature,
        },
    };
    let cfg = GenerationConfig {
        tag,
        strategy,
        max_len: d.max_len,
        seed,
        consume_copies: d.consume_copies,
    };
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

/// One line of a predictions file.
#[derive(Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub tag: String,
    pub prediction: String,
}

fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let seed = effective_seed(a.decode.seed)?;
    let mut m = Manifest::new("generate", a, Some(seed));
    let tag = parse_tag(&a.tag)?;
    let cfg = generation_config(&a.decode, tag, seed)?;
    let model = load_cond_model(&a.model, &mut m)?;
    let examples = load_corpus(&a.corpus, &mut m)?;
    let preds = generate_batch(&model, &examples, &cfg);
    let file = File::create(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let mut w = BufWriter::new(file);
    for (e, p) in examples.iter().zip(&preds) {
        let line = Prediction {
            id: e.id.clone(),
            tag: tag_name(tag),
            prediction: p.to_string(),
        };
        let json = serde_json::to_string(&line).map_err(|e| CliError::new(Kind::Other, e.to_string()))?;
        writeln!(w, "{json}").map_err(|e| CliError::io(&a.out, e))?;
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    m.output(&a.out);
    m.write()?;
    Ok(())
}

/// One row of a knob sweep.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub tag: String,
    pub unsupported_rate: f64,
    pub coverage_mean: f64,
    pub mean_len: f64,
}

fn knob_sweep(a: &KnobSweepArgs) -> Result<(), CliError> {
    let seed = effective_seed(a.decode.seed)?;
    let mut m = Manifest::new("knob-sweep", a, Some(seed));
    let model = load_cond_model(&a.model, &mut m)?;
    let examples = load_corpus(&a.corpus, &mut m)?;
    let mut rows = Vec::new();
    for tag in HallucinationTag::all() {
        let cfg = generation_config(&a.decode, Some(tag), seed)?;
        let preds = generate_batch(&model, &examples, &cfg);
        let r = evaluate(&preds, &examples)?;
        info!("{tag}: unsupported {:.4} coverage {:.3}", r.unsupported_rate, r.coverage_mean);
        rows.push(SweepRow {
            tag: tag.to_string(),
            unsupported_rate: r.unsupported_rate,
            coverage_mean: r.coverage_mean,
            mean_len: r.mean_len,
        });
    }
    emit(a.out.as_deref(), &rows, &mut m)
}

fn emit(out: Option<&Path>, value: &impl Serialize, m: &mut Manifest) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_json(path, value)?;
            m.output(path);
            m.write()?;
        }
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::new(Kind::Other, e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| {
            CliError::new(Kind::Schema, format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Lines up predictions with corpus examples by id.
pub fn align(preds: Vec<Prediction>, examples: &[Example]) -> Result<Vec<TokenSeq>, CliError> {
    let mut by_id: HashMap<String, String> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.clone(), p.prediction).is_some() {
            return Err(CliError::new(Kind::Schema, format!("duplicate prediction id {:?}", p.id)));
        }
    }
    let mut out = Vec::with_capacity(examples.len());
    for e in examples {
        let text = by_id
            .remove(&e.id)
            .ok_or_else(|| CliError::data(format!("no prediction for example {:?}", e.id)))?;
        out.push(tokenize(&text));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(CliError::data(format!("prediction {extra:?} has no example in the corpus")));
    }
    Ok(out)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("evaluate", a, None);
    m.input(&a.pred)?;
    let preds = read_predictions(&a.pred)?;
    let examples = load_corpus(&a.corpus, &mut m)?;
    let preds = align(preds, &examples)?;
    let report: EvalReport = evaluate(&preds, &examples)?;
    emit(a.out.as_deref(), &report, &mut m)
}
