use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::features::tokenize;

/// Dense token index with the document frequencies of the corpus it was
/// built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    n_documents: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    n_documents: usize,
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.tokens, r.document_frequency, r.n_documents)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { n_documents: v.n_documents, tokens: v.tokens, document_frequency: v.document_frequency }
    }
}

impl Vocabulary {
    pub fn from_parts(tokens: Vec<String>, document_frequency: Vec<usize>, n_documents: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, document_frequency, n_documents, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn document_frequency(&self, index: usize) -> usize {
        self.document_frequency[index]
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        let n = self.n_documents as f64;
        let df = self.document_frequency[index] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }
}

/// Keeps tokens with document frequency `>= min_df`, ranked by
/// `(df desc, token asc)` and truncated to `max_size` when given.
pub fn build_vocabulary(corpus: &Dataset, min_df: usize, max_size: Option<usize>) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if min_df == 0 {
        return Err(Error::InvalidArgument("min_df must be at least 1".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for text in corpus.texts() {
        let unique: BTreeSet<String> = tokenize(text).into_iter().collect();
        for tok in unique {
            *df.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().filter(|&(_, d)| d >= min_df).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(cap) = max_size {
        ranked.truncate(cap);
    }
    let (tokens, freqs) = ranked.into_iter().unzip();
    Ok(Vocabulary::from_parts(tokens, freqs, corpus.len()))
}
