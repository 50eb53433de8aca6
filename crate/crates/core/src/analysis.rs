//! Exploratory statistics: class distribution, surface features of
//! headlines and their correlations, and per-class keyword counts. All
//! outputs are plain data for external plotting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{class_counts, Dataset, HeadlineRecord, SentimentLabel};
use crate::error::{Error, Result};
use crate::features::tokenize;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: [usize; 3],
    pub proportions: [f64; 3],
}

pub fn class_distribution(dataset: &Dataset) -> Result<ClassDistribution> {
    if dataset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts = class_counts(dataset);
    let n = dataset.len() as f64;
    Ok(ClassDistribution { counts, proportions: counts.map(|c| c as f64 / n) })
}

pub const FEATURE_NAMES: [&str; 5] = ["char_len", "token_count", "avg_token_len", "digit_ratio", "uppercase_ratio"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeatures {
    pub char_len: usize,
    pub token_count: usize,
    pub avg_token_len: f64,
    /// Share of characters that are decimal digits.
    pub digit_ratio: f64,
    /// Share of characters that are uppercase letters.
    pub uppercase_ratio: f64,
}

impl DerivedFeatures {
    pub fn as_row(&self) -> Vec<f64> {
        vec![self.char_len as f64, self.token_count as f64, self.avg_token_len, self.digit_ratio, self.uppercase_ratio]
    }
}

pub fn derived_features(record: &HeadlineRecord) -> DerivedFeatures {
    let text = &record.text;
    let char_len = text.chars().count();
    let tokens = tokenize(text);
    let token_chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
    let digits = text.chars().filter(char::is_ascii_digit).count();
    let upper = text.chars().filter(|c| c.is_uppercase()).count();
    let share = |k: usize| if char_len == 0 { 0.0 } else { k as f64 / char_len as f64 };
    DerivedFeatures {
        char_len,
        token_count: tokens.len(),
        avg_token_len: if tokens.is_empty() { 0.0 } else { token_chars as f64 / tokens.len() as f64 },
        digit_ratio: share(digits),
        uppercase_ratio: share(upper),
    }
}

/// Pearson correlations between columns. Constant columns are flagged and
/// get 0 everywhere in their row and column, diagonal included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub values: Vec<Vec<f64>>,
    pub constant_columns: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("feature");
        for n in names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn correlation_matrix(rows: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if rows.len() < 2 {
        return Err(Error::InsufficientRecords(format!("correlation needs at least 2 rows, got {}", rows.len())));
    }
    let k = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch(format!("row of length {} in a {k}-column table", r.len())));
    }
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let constant: Vec<bool> = (0..k).map(|j| rows.iter().all(|r| r[j] == rows[0][j])).collect();
    let mut values = vec![vec![0.0; k]; k];
    for a in 0..k {
        if constant[a] {
            continue;
        }
        values[a][a] = 1.0;
        for b in a + 1..k {
            if constant[b] {
                continue;
            }
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for r in rows {
                let (da, db) = (r[a] - means[a], r[b] - means[b]);
                sab += da * db;
                saa += da * da;
                sbb += db * db;
            }
            let rho = (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0);
            values[a][b] = rho;
            values[b][a] = rho;
        }
    }
    Ok(CorrelationMatrix { values, constant_columns: constant })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordList {
    words: BTreeSet<String>,
}

impl StopwordList {
    /// One word per line; `#` comments and blank lines ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { words }
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self { words: words.into_iter().map(|w| w.into().to_lowercase()).collect() }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Ranked `(token, count)` lists per class, in canonical class order.
pub type KeywordTable = [Vec<(String, usize)>; 3];

/// Counts non-stopword tokens per class and keeps the `top_k` most frequent,
/// ranked by `(count desc, token asc)`.
pub fn keyword_frequencies(dataset: &Dataset, top_k: usize, stopwords: &StopwordList) -> Result<KeywordTable> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let mut counts: [BTreeMap<String, usize>; 3] = Default::default();
    for rec in &dataset.records {
        for tok in tokenize(&rec.text) {
            if !stopwords.contains(&tok) {
                *counts[rec.label.index()].entry(tok).or_default() += 1;
            }
        }
    }
    Ok(counts.map(|m| {
        let mut ranked: Vec<(String, usize)> = m.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        ranked
    }))
}

pub fn keywords_to_csv(table: &KeywordTable) -> String {
    let mut out = String::from("sentiment,rank,token,count\n");
    for label in SentimentLabel::ALL {
        for (rank, (tok, count)) in table[label.index()].iter().enumerate() {
            let _ = writeln!(out, "{label},{},{tok},{count}", rank + 1);
        }
    }
    out
}

/// Everything behind the exploratory figures, in one serializable bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureData {
    pub class_distribution: ClassDistribution,
    pub feature_names: Vec<String>,
    pub correlation: CorrelationMatrix,
    pub keywords: BTreeMap<String, Vec<(String, usize)>>,
}

pub fn figure_data(dataset: &Dataset, top_k: usize, stopwords: &StopwordList) -> Result<FigureData> {
    let rows: Vec<Vec<f64>> = dataset.records.iter().map(|r| derived_features(r).as_row()).collect();
    let keywords = keyword_frequencies(dataset, top_k, stopwords)?;
    Ok(FigureData {
        class_distribution: class_distribution(dataset)?,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        correlation: correlation_matrix(&rows)?,
        keywords: SentimentLabel::ALL.into_iter().zip(keywords).map(|(l, k)| (l.to_string(), k)).collect(),
    })
}
