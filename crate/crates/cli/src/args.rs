use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Financial headline sentiment pipeline.
///
/// Every command writes its artifacts and a manifest.json (inputs, settings,
/// seeds, SHA-256 of outputs) into its output directory.
#[derive(Debug, Parser)]
#[command(name = "finsent", version)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print JSON instead of human-readable tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw corpus into the normalized `sentiment,headline` CSV.
    Ingest(IngestArgs),
    /// Stratified train/test split.
    Split(SplitArgs),
    /// Resample to an equal count per class.
    Upsample(UpsampleArgs),
    /// Add synonym/insert/swap/delete variants of every headline.
    Augment(AugmentArgs),
    /// Class distribution, feature correlations and keyword counts.
    Analyze(AnalyzeArgs),
    /// Vocabulary and TF-IDF (optionally mean-embedding) features.
    Featurize(FeaturizeArgs),
    /// Train the TF-IDF logistic-regression baseline.
    TrainLinear(TrainLinearArgs),
    /// Train the transformer encoder, fully or with adapters only (--peft).
    TrainEncoder(TrainEncoderArgs),
    /// Predict labels through a model or a generation backend.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Tabulate several evaluation reports side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw corpus file (defaults to paths.data).
    #[arg(long, conflicts_with = "sample")]
    pub input: Option<PathBuf>,
    /// Use the bundled 90-headline sample corpus.
    #[arg(long)]
    pub sample: bool,
    /// csv_label_first | csv_headered | at_separated
    #[arg(long)]
    pub format: Option<String>,
    /// utf8 | latin1
    #[arg(long)]
    pub encoding: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Training records (default 300).
    #[arg(long)]
    pub train: Option<usize>,
    /// Test records (default 300).
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UpsampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Records per class (default: the largest class count).
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Synonym lexicon (default: bundled financial thesaurus).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub copies: Option<usize>,
    #[arg(long)]
    pub n_replace: Option<usize>,
    #[arg(long)]
    pub n_insert: Option<usize>,
    #[arg(long)]
    pub p_delete: Option<f64>,
    #[arg(long)]
    pub n_swap: Option<usize>,
    /// synonym | uniform_lexicon
    #[arg(long)]
    pub insertion: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Corpus the vocabulary is built from.
    #[arg(long)]
    pub input: PathBuf,
    /// Further corpora to featurize with the same vocabulary.
    #[arg(long)]
    pub apply: Vec<PathBuf>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Word vectors for mean-embedding features.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainLinearArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out corpus for a final accuracy figure.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainEncoderArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Evaluated at the end of every epoch.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Train low-rank adapters only; the base weights stay frozen.
    #[arg(long)]
    pub peft: bool,
    /// Start from this checkpoint (its vocabulary and shape are reused).
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Also write the adapter-merged weights.
    #[arg(long, requires = "peft")]
    pub merged: bool,
    /// Adapter targets: query key value attn_out ffn_in ffn_out head.
    #[arg(long, num_args = 1..)]
    pub targets: Vec<String>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub per_device_batch: Option<usize>,
    #[arg(long)]
    pub grad_accum_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Linear bundle or encoder checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// linear | encoder | http | echo | oracle | unparseable
    #[arg(long)]
    pub backend: Option<String>,
    /// Fixed answer for the echo backend.
    #[arg(long)]
    pub echo_text: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub attempts: Option<usize>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// count_as_error, or a label word to substitute.
    #[arg(long)]
    pub no_label: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corpus with the true labels.
    #[arg(long)]
    pub gold: PathBuf,
    /// predictions.csv from `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Rounding of the JSON summary.
    #[arg(long)]
    pub decimals: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// NAME=PATH of a report.json; repeatable, printed in order.
    #[arg(long = "report")]
    pub reports: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
