use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::features::{tokenize, Vocabulary};

/// One sparse row: `(column, weight)` pairs with strictly increasing columns.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix {
    pub rows: Vec<SparseRow>,
    pub n_cols: usize,
}

impl DocTermMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.n_cols];
                for &(c, w) in row {
                    dense[c] = w;
                }
                dense
            })
            .collect()
    }

    /// Writes `row,col,weight` triplets with a header line.
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "weight"])?;
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, weight) in row {
                w.write_record([r.to_string(), c.to_string(), weight.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads triplets written by [`write_triplets`](Self::write_triplets).
    /// Dimensions are not stored in the file and must be supplied.
    pub fn read_triplets<R: Read>(input: R, n_rows: usize, n_cols: usize) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_rows];
        let mut reader = csv::Reader::from_reader(input);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |m: &str| Error::Parse { row: i + 2, message: m.to_string() };
            let field = |k: usize| rec.get(k).ok_or_else(|| bad("missing field"));
            let r: usize = field(0)?.parse().map_err(|_| bad("bad row index"))?;
            let c: usize = field(1)?.parse().map_err(|_| bad("bad column index"))?;
            let w: f64 = field(2)?.parse().map_err(|_| bad("bad weight"))?;
            if r >= n_rows || c >= n_cols {
                return Err(bad("index out of range"));
            }
            rows[r].insert(c, w);
        }
        Ok(Self { rows: rows.into_iter().map(|m| m.into_iter().collect()).collect(), n_cols })
    }
}

/// TF-IDF features for a dataset against a fitted vocabulary.
pub fn tfidf(corpus: &Dataset, vocab: &Vocabulary) -> Result<DocTermMatrix> {
    tfidf_texts(corpus.texts(), vocab)
}

/// Raw counts times smoothed idf, then L2-normalized per row. Rows without
/// any in-vocabulary token stay empty (all zero).
pub fn tfidf_texts<'a, I>(texts: I, vocab: &Vocabulary) -> Result<DocTermMatrix>
where
    I: IntoIterator<Item = &'a str>,
{
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let rows = texts
        .into_iter()
        .map(|text| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for tok in tokenize(text) {
                if let Some(i) = vocab.index_of(&tok) {
                    *counts.entry(i).or_default() += 1;
                }
            }
            let mut row: SparseRow = counts.into_iter().map(|(i, tf)| (i, tf as f64 * vocab.idf(i))).collect();
            let norm = row.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, w)| *w /= norm);
            }
            row
        })
        .collect();
    Ok(DocTermMatrix { rows, n_cols: vocab.len() })
}
