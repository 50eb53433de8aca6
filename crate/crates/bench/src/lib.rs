//! Synthetic inputs shared by the benchmarks.

use finsent_core::rng::substream;
use finsent_core::{Dataset, HeadlineRecord, SentimentLabel};
use rand::Rng;

const WORDS: [&str; 24] = [
    "profit",
    "rose",
    "fell",
    "sales",
    "net",
    "quarter",
    "operating",
    "loss",
    "shares",
    "company",
    "market",
    "growth",
    "eur",
    "mn",
    "increased",
    "decreased",
    "orders",
    "contract",
    "signed",
    "year",
    "period",
    "bank",
    "plant",
    "cuts",
];

/// `n` headlines of 6 to 20 words from a small financial vocabulary,
/// labels cycling through the three classes.
pub fn synthetic_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = substream(seed, "bench.corpus", 0);
    let records = (0..n)
        .map(|i| {
            let len = rng.gen_range(6..=20);
            let text: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
            HeadlineRecord::new(text.join(" "), SentimentLabel::ALL[i % 3]).expect("non-empty text")
        })
        .collect();
    Dataset::new(records, "synthetic")
}
