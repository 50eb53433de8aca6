use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Pretrained word vectors of uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        Ok(Self { dim, vectors: HashMap::new() })
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} in a table of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Reads `word v1 ... vd` lines. A first line holding exactly two
    /// integers (`count dim`) is treated as a header and skipped.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
                continue;
            }
            let row = i + 1;
            if fields.len() < 2 {
                return Err(Error::Parse { row, message: "expected a word followed by at least one value".into() });
            }
            let vector = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { row, message: e.to_string() })?;
            let table = match &mut table {
                Some(t) => t,
                None => table.insert(EmbeddingTable::new(vector.len())?),
            };
            table.insert(fields[0], vector).map_err(|e| Error::Parse { row, message: e.to_string() })?;
        }
        table.ok_or(Error::EmptyCorpus)
    }
}

/// Mean of the vectors of in-table tokens, with the fraction of tokens
/// that were found. No matches gives the zero vector and coverage 0.
pub fn embed_mean<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> (Vec<f64>, f64) {
    let mut sum = vec![0.0; table.dim()];
    let mut found = 0usize;
    for v in tokens.iter().filter_map(|t| table.get(t.as_ref())) {
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        found += 1;
    }
    if found == 0 {
        return (sum, 0.0);
    }
    sum.iter_mut().for_each(|s| *s /= found as f64);
    (sum, found as f64 / tokens.len() as f64)
}
