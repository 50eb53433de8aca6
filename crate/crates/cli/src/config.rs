//! Run configuration file (TOML). Every key is optional; command-line flags
//! override file values, which override built-in defaults.
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! data = "all-data.csv"          # raw corpus for `ingest`
//! lexicon = "thesaurus.txt"      # `headword: syn, syn` lines
//! embeddings = "vectors.txt"     # word2vec/GloVe text format
//! stopwords = "stopwords.txt"
//! template = "prompt.toml"       # [prompt] table in its own file
//! output_dir = "runs"            # each command writes <output_dir>/<command>
//!
//! [corpus]   format = "csv_label_first"  encoding = "latin1"
//! [split]    train = 300  test = 300
//! [upsample] target = 100
//! [augment]  n_replace = 1  n_insert = 1  p_delete = 0.1  n_swap = 1  copies = 1  insertion = "synonym"
//! [analyze]  top_k = 20
//! [features] min_df = 1  max_vocab = 5000
//! [linear]   lr = 0.5  epochs = 100  batch_size = 16  l2 = 0.0
//! [encoder]  d_model = 32  n_heads = 4  d_ff = 64  n_layers = 1  max_seq_len = 24  init_scale = 1.0
//!            rank = 4  alpha = 8.0  targets = ["query", "value", "head"]
//! [train]    epochs = 3  per_device_batch = 1  grad_accum_steps = 8  base_lr = 2e-4  warmup_ratio = 0.03
//!            weight_decay = 0.01  beta1 = 0.9  beta2 = 0.999  eps = 1e-8
//! [prompt]   instruction = "...{headline}..."  answer_marker = "Answer:"  labels = ["positive", "neutral", "negative"]
//! [backend]  kind = "http"  concurrency = 4  attempts = 3  backoff_ms = 200  max_new_tokens = 4  temperature = 0.0
//!            no_label = "count_as_error"     # or a label word
//! [backend.http] url = "..."  text_path = "choices.0.text"  timeout_secs = 30  auth_env = "FINSENT_BACKEND_TOKEN"
//! [metrics]  decimals = 3
//! ```
//!
//! Unknown keys are rejected with the line and column of the offending key.

use std::fs;
use std::path::{Path, PathBuf};

use finsent_core::promptkit::HttpConfig;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub split: SplitSection,
    pub upsample: UpsampleSection,
    pub augment: AugmentSection,
    pub analyze: AnalyzeSection,
    pub features: FeatureSection,
    pub linear: LinearSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub prompt: PromptSection,
    pub backend: BackendSection,
    pub metrics: MetricsSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub format: Option<String>,
    pub encoding: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: Option<usize>,
    pub test: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpsampleSection {
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub n_replace: Option<usize>,
    pub n_insert: Option<usize>,
    pub p_delete: Option<f64>,
    pub n_swap: Option<usize>,
    pub copies: Option<usize>,
    pub insertion: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub min_df: Option<usize>,
    pub max_vocab: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ff: Option<usize>,
    pub n_layers: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub init_scale: Option<f64>,
    pub rank: Option<usize>,
    pub alpha: Option<f64>,
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub per_device_batch: Option<usize>,
    pub grad_accum_steps: Option<usize>,
    pub base_lr: Option<f64>,
    pub warmup_ratio: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    pub instruction: Option<String>,
    pub answer_marker: Option<String>,
    pub labels: Option<[String; 3]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub echo_text: Option<String>,
    pub concurrency: Option<usize>,
    pub attempts: Option<usize>,
    pub backoff_ms: Option<u64>,
    pub max_new_tokens: Option<usize>,
    pub temperature: Option<f64>,
    pub no_label: Option<String>,
    pub http: Option<HttpConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub decimals: Option<u32>,
}

/// A standalone prompt file holds a single `[prompt]` table.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptFile {
    prompt: PromptSection,
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = parse(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        cfg.validate()?;
        if let Some(t) = &cfg.paths.template {
            let file: PromptFile = parse(t)?;
            let p = &mut cfg.prompt;
            p.instruction = p.instruction.take().or(file.prompt.instruction);
            p.answer_marker = p.answer_marker.take().or(file.prompt.answer_marker);
            p.labels = p.labels.take().or(file.prompt.labels);
        }
        Ok(cfg)
    }

    /// Referenced input files must exist.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.paths;
        let inputs = [
            ("paths.data", &p.data),
            ("paths.lexicon", &p.lexicon),
            ("paths.embeddings", &p.embeddings),
            ("paths.stopwords", &p.stopwords),
            ("paths.template", &p.template),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(CliError::Config(format!("{key}: {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

impl Paths {
    /// Relative paths in a config file are relative to that file.
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.data,
            &mut self.lexicon,
            &mut self.embeddings,
            &mut self.stopwords,
            &mut self.template,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
