//! Token-level augmentation: synonym replacement, random insertion, random
//! swap and random deletion.
//!
//! Every operator draws from the generator it is handed, so callers control
//! determinism. [`augment_dataset`] derives one stream per source record.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, HeadlineRecord};
use crate::error::{Error, Result};
use crate::rng::substream;

const BUNDLED_THESAURUS: &str = include_str!("../data/financial_thesaurus.txt");

/// Lowercase headword → synonyms. No list is empty and none contains its
/// own headword.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

fn lookup_key(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

impl SynonymLexicon {
    /// Parses `headword: syn1, syn2, ...` lines. `#` starts a comment and
    /// blank lines are ignored. Self-references are dropped; a headword
    /// that appears twice gets the union of its lists.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let row = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse { row, message: "expected `headword: synonyms`".into() })?;
            let head = head.trim().to_lowercase();
            if head.is_empty() {
                return Err(Error::Parse { row, message: "empty headword".into() });
            }
            let syns: Vec<String> =
                rest.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect();
            if syns.is_empty() {
                return Err(Error::Parse { row, message: format!("no synonyms for {head:?}") });
            }
            let list = entries.entry(head.clone()).or_default();
            for s in syns {
                if s != head && !list.contains(&s) {
                    list.push(s);
                }
            }
        }
        entries.retain(|_, v| !v.is_empty());
        Ok(Self { entries })
    }

    /// The financial mini-thesaurus shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_THESAURUS).expect("bundled thesaurus is well-formed")
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let mut text = String::new();
        for (head, syns) in entries {
            let syns: Vec<String> = syns.into_iter().map(Into::into).collect();
            text.push_str(&format!("{}: {}\n", head.into(), syns.join(", ")));
        }
        Self::parse(&text).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Synonyms of a token, matched case-insensitively with surrounding
    /// punctuation ignored.
    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.entries.get(&lookup_key(token)).map(Vec::as_slice)
    }

    /// Every distinct word in the lexicon, sorted.
    pub fn words(&self) -> Vec<&str> {
        let mut set: BTreeSet<&str> = BTreeSet::new();
        for (h, syns) in &self.entries {
            set.insert(h);
            set.extend(syns.iter().map(String::as_str));
        }
        set.into_iter().collect()
    }
}

/// Where inserted words come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionSource {
    /// A synonym of a uniformly chosen token already in the sentence.
    #[default]
    Synonym,
    /// A word drawn uniformly from the whole lexicon.
    UniformLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub n_replace: usize,
    pub n_insert: usize,
    pub p_delete: f64,
    pub n_swap: usize,
    pub copies_per_record: usize,
    pub seed: u64,
    #[serde(default)]
    pub insertion: InsertionSource,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_replace: 1,
            n_insert: 1,
            p_delete: 0.1,
            n_swap: 1,
            copies_per_record: 1,
            seed: 0,
            insertion: InsertionSource::Synonym,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_delete) {
            return Err(Error::InvalidArgument(format!("p_delete must lie in [0, 1], got {}", self.p_delete)));
        }
        Ok(())
    }
}

/// Replaces up to `n` distinct lexicon-covered positions with a uniformly
/// chosen synonym each.
pub fn synonym_replace<R: Rng + ?Sized>(
    tokens: &[String],
    n: usize,
    lexicon: &SynonymLexicon,
    rng: &mut R,
) -> Vec<String> {
    let mut out = tokens.to_vec();
    let mut candidates: Vec<usize> = (0..tokens.len()).filter(|&i| lexicon.synonyms(&tokens[i]).is_some()).collect();
    candidates.shuffle(rng);
    for &i in candidates.iter().take(n) {
        let syns = lexicon.synonyms(&tokens[i]).expect("candidate has synonyms");
        out[i] = syns[rng.gen_range(0..syns.len())].clone();
    }
    out
}

/// Inserts up to `n` words at uniformly chosen positions. Stops early when
/// no word can be drawn.
pub fn random_insertion<R: Rng + ?Sized>(
    tokens: &[String],
    n: usize,
    lexicon: &SynonymLexicon,
    source: InsertionSource,
    rng: &mut R,
) -> Vec<String> {
    let mut out = tokens.to_vec();
    let all_words = match source {
        InsertionSource::UniformLexicon => lexicon.words(),
        InsertionSource::Synonym => Vec::new(),
    };
    for _ in 0..n {
        let word = match source {
            InsertionSource::Synonym => {
                let covered: Vec<&[String]> = out.iter().filter_map(|t| lexicon.synonyms(t)).collect();
                if covered.is_empty() {
                    break;
                }
                let syns = covered[rng.gen_range(0..covered.len())];
                syns[rng.gen_range(0..syns.len())].clone()
            }
            InsertionSource::UniformLexicon => {
                if all_words.is_empty() {
                    break;
                }
                all_words[rng.gen_range(0..all_words.len())].to_string()
            }
        };
        let at = rng.gen_range(0..=out.len());
        out.insert(at, word);
    }
    out
}

/// Keeps each token with probability `1 - p`, preserving order. A
/// non-empty input never yields an empty output: if everything would be
/// dropped, one uniformly chosen token survives.
pub fn random_deletion<R: Rng + ?Sized>(tokens: &[String], p: f64, rng: &mut R) -> Vec<String> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let p = p.clamp(0.0, 1.0);
    let kept: Vec<String> = tokens.iter().filter(|_| !rng.gen_bool(p)).cloned().collect();
    if kept.is_empty() {
        return vec![tokens[rng.gen_range(0..tokens.len())].clone()];
    }
    kept
}

/// Performs `n` swaps of two distinct uniformly chosen positions.
pub fn random_swap<R: Rng + ?Sized>(tokens: &[String], n: usize, rng: &mut R) -> Vec<String> {
    let mut out = tokens.to_vec();
    let len = out.len();
    if len < 2 {
        return out;
    }
    for _ in 0..n {
        let i = rng.gen_range(0..len);
        let mut j = rng.gen_range(0..len - 1);
        if j >= i {
            j += 1;
        }
        out.swap(i, j);
    }
    out
}

/// Applies replace → insert → swap → delete to one whitespace-tokenized
/// headline. Returns the source text unchanged when no operator changed a
/// token.
pub fn augment_text<R: Rng + ?Sized>(
    text: &str,
    config: &AugmentConfig,
    lexicon: &SynonymLexicon,
    rng: &mut R,
) -> String {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    let out = synonym_replace(&tokens, config.n_replace, lexicon, rng);
    let out = random_insertion(&out, config.n_insert, lexicon, config.insertion, rng);
    let out = random_swap(&out, config.n_swap, rng);
    let out = random_deletion(&out, config.p_delete, rng);
    if out == tokens {
        text.to_string()
    } else {
        out.join(" ")
    }
}

/// Every source record followed by `copies_per_record` augmented variants
/// carrying the source label.
pub fn augment_dataset(dataset: &Dataset, config: &AugmentConfig, lexicon: &SynonymLexicon) -> Result<Dataset> {
    config.validate()?;
    let mut records = Vec::with_capacity(dataset.len() * (1 + config.copies_per_record));
    for (i, rec) in dataset.records.iter().enumerate() {
        records.push(rec.clone());
        let mut rng = substream(config.seed, "augment", i as u64);
        for _ in 0..config.copies_per_record {
            let text = augment_text(&rec.text, config, lexicon, &mut rng);
            let variant = HeadlineRecord::new(&text, rec.label).unwrap_or_else(|_| rec.clone());
            records.push(variant);
        }
    }
    let step = format!(
        "augment(copies={}, replace={}, insert={}, swap={}, p_delete={}, seed={})",
        config.copies_per_record, config.n_replace, config.n_insert, config.n_swap, config.p_delete, config.seed
    );
    let provenance = if dataset.provenance.is_empty() { step } else { format!("{} | {}", dataset.provenance, step) };
    Ok(Dataset::new(records, provenance))
}
