use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "halknob", version, about = "Hallucination scoring and tag-controlled generation for data-to-text corpora")]
pub struct Cli {
    /// Worker threads for per-example work; outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic corpus with per-token support labels.
    Synth(SynthArgs),
    /// Train the unconditional n-gram LM on corpus targets.
    TrainLm(TrainLmArgs),
    /// Fit the copy weight of the conditional model.
    FitCond(FitCondArgs),
    /// Fill in hal_wo and/or hal_lm.
    Score(ScoreArgs),
    /// Compute bucket boundaries from scored examples.
    Bucket(BucketArgs),
    /// Tag scored examples with hal_0 … hal_4.
    Annotate(AnnotateArgs),
    /// Keep the cleanest fraction of a scored corpus.
    Filter(FilterArgs),
    /// Fit one copy weight per tag on an annotated corpus.
    TrainControlled(TrainControlledArgs),
    /// Generate from the tables of a corpus.
    Generate(GenerateArgs),
    /// Generate with every tag and report the metrics per tag.
    KnobSweep(KnobSweepArgs),
    /// Score predictions against a corpus.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::TrainLm(_) => "train-lm",
            Command::FitCond(_) => "fit-cond",
            Command::Score(_) => "score",
            Command::Bucket(_) => "bucket",
            Command::Annotate(_) => "annotate",
            Command::Filter(_) => "filter",
            Command::TrainControlled(_) => "train-controlled",
            Command::Generate(_) => "generate",
            Command::KnobSweep(_) => "knob-sweep",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long = "n", default_value_t = 1000)]
    pub n_examples: usize,
    /// Overridden by HALKNOB_SEED.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub paraphrase_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub inference_rate: f64,
    /// Comma-separated fields (name, birth_date, birth_place, nationality,
    /// occupation, clubs, death_year). Default: all.
    #[arg(long, value_delimiter = ',')]
    pub schema: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct NgramArgs {
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// One value for every order, or one per order (lowest first).
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub k: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub min_count: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub ngram: NgramArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopySourceArg {
    Values,
    ValuesAndFields,
}

#[derive(Debug, Args, Serialize)]
pub struct FitCondArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Base LM from train-lm.
    #[arg(long)]
    pub lm: PathBuf,
    /// Also fit one weight per tag; every tag needs examples.
    #[arg(long)]
    pub per_tag: bool,
    #[arg(long, default_value_t = halknob_core::cond::DEFAULT_K_COPY)]
    pub k_copy: f64,
    #[arg(long, value_enum, default_value_t = CopySourceArg::Values)]
    pub copy_source: CopySourceArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Wo,
    Lm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerArg {
    Wo,
    Lm,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    /// Unconditional LM for hal_lm. Without --lm/--lmx the pair is trained
    /// on the corpus itself.
    #[arg(long, requires = "lmx")]
    pub lm: Option<PathBuf>,
    #[arg(long, requires = "lm")]
    pub lmx: Option<PathBuf>,
    /// Score hal_lm with models trained on the other folds.
    #[arg(long, conflicts_with_all = ["lm", "lmx"])]
    pub heldout_folds: Option<usize>,
    /// Count field names as supported words in hal_wo.
    #[arg(long)]
    pub include_fields: bool,
    #[command(flatten)]
    pub ngram: NgramArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketModeArg {
    Fixed,
    Quantile,
}

#[derive(Debug, Args, Serialize)]
pub struct BucketArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ScorerArg::Wo)]
    pub scorer: ScorerArg,
    #[arg(long, value_enum, default_value_t = BucketModeArg::Fixed)]
    pub bucket_mode: BucketModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Boundaries from `bucket`; computed from the corpus when absent.
    #[arg(long)]
    pub bucketer: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScorerArg::Wo)]
    pub scorer: ScorerArg,
    #[arg(long, value_enum, default_value_t = BucketModeArg::Fixed, conflicts_with = "bucketer")]
    pub bucket_mode: BucketModeArg,
    /// Annotated corpus; the report goes next to it as `<stem>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub keep: f64,
    #[arg(long, value_enum, default_value_t = ScorerArg::Wo)]
    pub by: ScorerArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainControlledArgs {
    /// Annotated corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Base LM from train-lm.
    #[arg(long)]
    pub lm: PathBuf,
    #[arg(long, default_value_t = halknob_core::cond::DEFAULT_K_COPY)]
    pub k_copy: f64,
    #[arg(long, value_enum, default_value_t = CopySourceArg::Values)]
    pub copy_source: CopySourceArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Greedy,
    Beam,
    Sample,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::Beam)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 4)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 40)]
    pub max_len: usize,
    /// Overridden by HALKNOB_SEED.
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// Let each source occurrence be copied only once.
    #[arg(long)]
    pub consume_copies: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Conditional model from fit-cond or train-controlled.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus whose tables are verbalized.
    #[arg(long)]
    pub corpus: PathBuf,
    /// hal_0 … hal_4, or `none` for the global copy weight.
    #[arg(long, default_value = "hal_0")]
    pub tag: String,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KnobSweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Sweep table as JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Predictions JSONL from generate.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
