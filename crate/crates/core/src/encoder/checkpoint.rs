//! Versioned JSON checkpoints and a text-in, label-out classifier.
//!
//! ```text
//! {
//!   "format": "finsent-encoder", "version": 1,
//!   "config": { vocab_size, d_model, n_heads, d_ff, n_layers, max_seq_len, n_classes, layernorm_eps },
//!   "merged": false,
//!   "tensors":  [ { "name": "layers.0.w_q", "shape": [8, 8], "data": [row-major ...] }, ... ],
//!   "adapters": [ { "slot": {"layer": 0, "target": "query"}, "rank": 4, "alpha": 8.0,
//!                   "a": {tensor}, "b": {tensor} }, ... ] | null,
//!   "vocabulary": { n_documents, tokens, document_frequency } | null
//! }
//! ```
//!
//! `merged: true` marks an export whose adapters were folded into the base
//! weights; such files carry no adapter list.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SentimentLabel};
use crate::encoder::model::{logits, EncodedExample};
use crate::encoder::{AdapterSet, AdapterSlot, EncoderConfig, EncoderParams, LoraAdapter};
use crate::error::{Error, Result};
use crate::features::{encode_ids, pad_or_truncate, tokenize, Vocabulary, PAD_ID, RESERVED_IDS, UNK_ID};
use crate::numeric::{argmax, softmax};
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT: &str = "finsent-encoder";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl TensorRecord {
    fn new(name: impl Into<String>, m: &Matrix) -> Self {
        Self { name: name.into(), shape: [m.rows, m.cols], data: m.data.clone() }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        let [r, c] = self.shape;
        if r * c != self.data.len() {
            return Err(Error::Checkpoint(format!("{}: shape {r}x{c} but {} values", self.name, self.data.len())));
        }
        Ok(Matrix::from_vec(r, c, self.data.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    pub slot: AdapterSlot,
    pub rank: usize,
    pub alpha: f64,
    pub a: TensorRecord,
    pub b: TensorRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: EncoderConfig,
    pub merged: bool,
    pub tensors: Vec<TensorRecord>,
    pub adapters: Option<Vec<AdapterRecord>>,
    pub vocabulary: Option<Vocabulary>,
}

impl EncoderCheckpoint {
    /// Base weights plus separate adapter tensors.
    pub fn new(
        config: &EncoderConfig,
        params: &EncoderParams,
        adapters: Option<&AdapterSet>,
        vocabulary: Option<&Vocabulary>,
    ) -> Result<Self> {
        params.check_shapes(config)?;
        if let Some(a) = adapters {
            a.check(params)?;
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            merged: false,
            tensors: params.tensors().into_iter().map(|(n, _, m)| TensorRecord::new(n, m)).collect(),
            adapters: adapters.map(|set| {
                set.entries
                    .iter()
                    .map(|(slot, ad)| AdapterRecord {
                        slot: *slot,
                        rank: ad.rank,
                        alpha: ad.alpha,
                        a: TensorRecord::new(format!("{slot}.lora_a"), &ad.a),
                        b: TensorRecord::new(format!("{slot}.lora_b"), &ad.b),
                    })
                    .collect()
            }),
            vocabulary: vocabulary.cloned(),
        })
    }

    /// Adapters folded into the base weights.
    pub fn merged(
        config: &EncoderConfig,
        params: &EncoderParams,
        adapters: &AdapterSet,
        vocabulary: Option<&Vocabulary>,
    ) -> Result<Self> {
        let mut ckpt = Self::new(config, &adapters.merged(params)?, None, vocabulary)?;
        ckpt.merged = true;
        Ok(ckpt)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Rebuilds the parameters, checking every name and shape.
    pub fn params(&self) -> Result<EncoderParams> {
        self.config.validate()?;
        let mut params = EncoderParams::zeros(&self.config);
        let slots = params.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("{} tensors, expected {}", self.tensors.len(), slots.len())));
        }
        for ((name, _, dst), rec) in slots.into_iter().zip(&self.tensors) {
            if name != rec.name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", rec.name)));
            }
            let m = rec.to_matrix()?;
            if m.shape() != dst.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", m.shape(), dst.shape())));
            }
            *dst = m;
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        Ok(params)
    }

    pub fn adapter_set(&self, params: &EncoderParams) -> Result<Option<AdapterSet>> {
        let Some(records) = &self.adapters else {
            return Ok(None);
        };
        let entries = records
            .iter()
            .map(|r| {
                Ok((r.slot, LoraAdapter { a: r.a.to_matrix()?, b: r.b.to_matrix()?, rank: r.rank, alpha: r.alpha }))
            })
            .collect::<Result<Vec<_>>>()?;
        let set = AdapterSet { entries };
        set.check(params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Some(set))
    }
}

/// Padded encoder input for one headline. Text with no tokens becomes a
/// single unknown token so that every input has a real position.
pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, Vec<u8>) {
    let mut ids = encode_ids(&tokenize(text), vocab);
    if ids.is_empty() {
        ids.push(UNK_ID);
    }
    let p = pad_or_truncate(&ids, max_len, PAD_ID);
    (p.ids, p.mask)
}

pub fn encode_dataset(ds: &Dataset, vocab: &Vocabulary, max_len: usize) -> Vec<EncodedExample> {
    ds.records
        .iter()
        .map(|r| {
            let (ids, mask) = encode_text(&r.text, vocab, max_len);
            EncodedExample { ids, mask, label: r.label }
        })
        .collect()
}

/// Vocabulary size the encoder needs for `vocab` (reserved ids included).
pub fn encoder_vocab_size(vocab: &Vocabulary) -> usize {
    vocab.len() + RESERVED_IDS
}

/// A trained encoder bundled with the vocabulary that feeds it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderClassifier {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub adapters: Option<AdapterSet>,
    pub vocabulary: Vocabulary,
}

impl EncoderClassifier {
    pub fn new(
        config: EncoderConfig,
        params: EncoderParams,
        adapters: Option<AdapterSet>,
        vocabulary: Vocabulary,
    ) -> Result<Self> {
        params.check_shapes(&config)?;
        if let Some(a) = &adapters {
            a.check(&params)?;
        }
        if encoder_vocab_size(&vocabulary) != config.vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "vocabulary of {} tokens needs vocab_size {}, config has {}",
                vocabulary.len(),
                encoder_vocab_size(&vocabulary),
                config.vocab_size
            )));
        }
        Ok(Self { config, params, adapters, vocabulary })
    }

    pub fn from_checkpoint(ckpt: &EncoderCheckpoint) -> Result<Self> {
        let params = ckpt.params()?;
        let adapters = ckpt.adapter_set(&params)?;
        let vocab = ckpt.vocabulary.clone().ok_or_else(|| Error::Checkpoint("checkpoint has no vocabulary".into()))?;
        Self::new(ckpt.config.clone(), params, adapters, vocab)
    }

    pub fn to_checkpoint(&self) -> Result<EncoderCheckpoint> {
        EncoderCheckpoint::new(&self.config, &self.params, self.adapters.as_ref(), Some(&self.vocabulary))
    }

    pub fn probabilities(&self, text: &str) -> Result<Vec<f64>> {
        let (ids, mask) = encode_text(text, &self.vocabulary, self.config.max_seq_len);
        softmax(&logits(&ids, &mask, &self.params, self.adapters.as_ref(), &self.config)?)
    }

    pub fn predict(&self, text: &str) -> Result<SentimentLabel> {
        Ok(SentimentLabel::ALL[argmax(&self.probabilities(text)?)])
    }
}
