//! Labeled headline corpora: parsing, serialization, stratified splitting
//! and per-class upsampling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Three-way sentiment label. `ALL` fixes the canonical class order used by
/// every matrix and report in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Neutral,
    Negative,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [SentimentLabel::Positive, SentimentLabel::Neutral, SentimentLabel::Negative];

    pub fn index(self) -> usize {
        match self {
            SentimentLabel::Positive => 0,
            SentimentLabel::Neutral => 1,
            SentimentLabel::Negative => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Negative => "negative",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let word = s.trim();
        SentimentLabel::ALL.into_iter().find(|l| l.as_str().eq_ignore_ascii_case(word)).ok_or_else(|| word.to_string())
    }
}

/// One labeled headline. The text is stored trimmed and is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadlineRecord {
    pub text: String,
    pub label: SentimentLabel,
}

impl HeadlineRecord {
    pub fn new(text: impl AsRef<str>, label: SentimentLabel) -> Result<Self> {
        let text = text.as_ref().trim();
        if text.is_empty() {
            return Err(Error::InvalidArgument("headline text is empty".into()));
        }
        Ok(Self { text: text.to_string(), label })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<HeadlineRecord>,
    /// Source path plus the chain of transforms (with seeds) applied to it.
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<HeadlineRecord>, provenance: impl Into<String>) -> Self {
        Self { records, provenance: provenance.into() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<SentimentLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }

    fn derived(&self, records: Vec<HeadlineRecord>, step: String) -> Dataset {
        let provenance = if self.provenance.is_empty() { step } else { format!("{} | {}", self.provenance, step) };
        Dataset::new(records, provenance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// `label,headline` rows, no header.
    CsvLabelFirst,
    /// `sentiment,headline` rows with an optional leading header row.
    CsvHeadered,
    /// `headline@label` lines.
    AtSeparated,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv_label_first" => Ok(Self::CsvLabelFirst),
            "csv_headered" => Ok(Self::CsvHeadered),
            "at_separated" => Ok(Self::AtSeparated),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoding {
    Utf8,
    Latin1,
}

impl FromStr for TextEncoding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "utf8" | "utf-8" => Ok(Self::Utf8),
            "latin1" | "latin-1" | "iso-8859-1" => Ok(Self::Latin1),
            other => Err(format!("unknown encoding {other:?}")),
        }
    }
}

fn decode(bytes: &[u8], encoding: TextEncoding) -> Result<String> {
    match encoding {
        TextEncoding::Utf8 => {
            let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
            std::str::from_utf8(bytes)
                .map(str::to_owned)
                .map_err(|e| Error::Decode { encoding: "UTF-8", message: e.to_string() })
        }
        // Latin-1 maps every byte to the code point of the same value.
        TextEncoding::Latin1 => Ok(bytes.iter().map(|&b| b as char).collect()),
    }
}

fn parse_label(row: usize, word: &str) -> Result<SentimentLabel> {
    word.parse().map_err(|label| Error::UnknownLabel { row, label })
}

fn make_record(row: usize, text: &str, label: SentimentLabel) -> Result<HeadlineRecord> {
    HeadlineRecord::new(text, label).map_err(|_| Error::Parse { row, message: "headline is empty".into() })
}

/// Parses a corpus from raw bytes. Row numbers in errors are 1-based
/// physical rows (records for CSV, lines for `@`-separated text).
pub fn parse_corpus(source: &[u8], format: CorpusFormat, encoding: TextEncoding) -> Result<Dataset> {
    let text = decode(source, encoding)?;
    let records = match format {
        CorpusFormat::AtSeparated => parse_at_separated(&text)?,
        CorpusFormat::CsvLabelFirst => parse_csv(&text, false)?,
        CorpusFormat::CsvHeadered => parse_csv(&text, true)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let provenance = format!("parse(format={format:?}, encoding={encoding:?})");
    Ok(Dataset::new(records, provenance))
}

/// Reads and parses a corpus file; provenance starts with the path.
pub fn read_corpus(path: &Path, format: CorpusFormat, encoding: TextEncoding) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let mut dataset = parse_corpus(&bytes, format, encoding)?;
    dataset.provenance = format!("{} | {}", path.display(), dataset.provenance);
    Ok(dataset)
}

fn parse_at_separated(text: &str) -> Result<Vec<HeadlineRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        // Headlines may contain '@', the label never does.
        let (headline, label) =
            line.rsplit_once('@').ok_or_else(|| Error::Parse { row, message: "missing '@' separator".into() })?;
        out.push(make_record(row, headline, parse_label(row, label)?)?);
    }
    Ok(out)
}

fn parse_csv(text: &str, headered: bool) -> Result<Vec<HeadlineRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if headered && i == 0 && rec.get(0).is_some_and(|c| c.trim().eq_ignore_ascii_case("sentiment")) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse { row, message: format!("expected 2 fields, found {}", rec.len()) });
        }
        let label = parse_label(row, &rec[0])?;
        // An unquoted comma inside the headline splits it across fields;
        // everything after the label belongs to the headline.
        let headline = rec.iter().skip(1).collect::<Vec<_>>().join(",");
        out.push(make_record(row, &headline, label)?);
    }
    Ok(out)
}

/// Canonical serialization: UTF-8 CSV with a `sentiment,headline` header.
pub fn to_csv(dataset: &Dataset) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["sentiment", "headline"])?;
    for r in &dataset.records {
        writer.write_record([r.label.as_str(), r.text.as_str()])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits the UTF-8 it was given"))
}

/// Per-class counts in canonical order.
pub fn class_counts(dataset: &Dataset) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for r in &dataset.records {
        counts[r.label.index()] += 1;
    }
    counts
}

fn indices_by_class(dataset: &Dataset) -> [Vec<usize>; 3] {
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for (i, r) in dataset.records.iter().enumerate() {
        by_class[r.label.index()].push(i);
    }
    by_class
}

/// Largest-remainder apportionment of `total` slots proportional to
/// `weights`, never exceeding `caps`. Remainder ties (and any slots left
/// over after capping) go to classes in canonical order.
fn apportion(total: usize, weights: [usize; 3], caps: [usize; 3]) -> Option<[usize; 3]> {
    let weight_sum: usize = weights.iter().sum();
    if total > caps.iter().sum::<usize>() || weight_sum == 0 {
        return (total == 0).then_some([0; 3]);
    }
    let mut quota = [0usize; 3];
    let mut remainders = [(0u128, 0usize); 3];
    for c in 0..3 {
        let exact = total as u128 * weights[c] as u128;
        quota[c] = (exact / weight_sum as u128) as usize;
        remainders[c] = (exact % weight_sum as u128, c);
    }
    let mut left = total - quota.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in &remainders {
        if left == 0 {
            break;
        }
        quota[c] += 1;
        left -= 1;
    }
    // Move any overflow beyond a class's capacity to classes with room.
    let mut overflow = 0;
    for c in 0..3 {
        if quota[c] > caps[c] {
            overflow += quota[c] - caps[c];
            quota[c] = caps[c];
        }
    }
    for c in 0..3 {
        let room = caps[c] - quota[c];
        let take = room.min(overflow);
        quota[c] += take;
        overflow -= take;
    }
    Some(quota)
}

/// Stratified train/test split. Both outputs keep the source record order.
pub fn stratified_split(
    dataset: &Dataset,
    train_total: usize,
    test_total: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if train_total + test_total > n {
        return Err(Error::InsufficientRecords(format!(
            "requested {train_total} train + {test_total} test from {n} records"
        )));
    }
    let counts = class_counts(dataset);
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::MissingClass(SentimentLabel::ALL[c].to_string()));
    }

    let train_quota =
        apportion(train_total, counts, counts).ok_or_else(|| Error::InsufficientRecords("train quota".into()))?;
    let remaining = [0, 1, 2].map(|c| counts[c] - train_quota[c]);
    let test_quota = apportion(test_total, counts, remaining)
        .ok_or_else(|| Error::InsufficientRecords("not enough records left in some class for the test set".into()))?;

    let mut train_idx = Vec::with_capacity(train_total);
    let mut test_idx = Vec::with_capacity(test_total);
    for (c, mut members) in indices_by_class(dataset).into_iter().enumerate() {
        members.shuffle(&mut substream(seed, "stratified_split", c as u64));
        train_idx.extend_from_slice(&members[..train_quota[c]]);
        test_idx.extend_from_slice(&members[train_quota[c]..train_quota[c] + test_quota[c]]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.records[i].clone()).collect();
    let step = |part: &str| format!("stratified_split(train={train_total}, test={test_total}, seed={seed}) -> {part}");
    Ok((dataset.derived(pick(&train_idx), step("train")), dataset.derived(pick(&test_idx), step("test"))))
}

/// Resamples to exactly `target_per_class` records per class.
///
/// Classes above the target are subsampled without replacement. Classes
/// below it keep every original record once and fill the gap with draws
/// made with replacement. The result is shuffled.
pub fn upsample(dataset: &Dataset, target_per_class: usize, seed: u64) -> Result<Dataset> {
    let by_class = indices_by_class(dataset);
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass(SentimentLabel::ALL[c].to_string()));
    }
    let mut chosen = Vec::with_capacity(3 * target_per_class);
    for (c, mut members) in by_class.into_iter().enumerate() {
        let mut rng = substream(seed, "upsample", c as u64);
        if members.len() >= target_per_class {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..target_per_class]);
        } else {
            let extra = target_per_class - members.len();
            let draws: Vec<usize> = (0..extra).map(|_| members[rng.gen_range(0..members.len())]).collect();
            chosen.extend(members);
            chosen.extend(draws);
        }
    }
    chosen.shuffle(&mut substream(seed, "upsample.order", 0));
    let records = chosen.into_iter().map(|i| dataset.records[i].clone()).collect();
    Ok(dataset.derived(records, format!("upsample(target={target_per_class}, seed={seed})")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTHETIC: &str = "positive,Profit rose sharply\n\
        neutral,\"The company is based in Espoo, Finland\"\n\
        negative,Sales fell 10 %\n\
        positive,Order intake grew\n\
        neutral,The board will meet on Monday\n";

    fn balanced(per_class: usize) -> Dataset {
        let mut records = Vec::new();
        for label in SentimentLabel::ALL {
            for i in 0..per_class {
                records.push(HeadlineRecord::new(format!("{label} headline {i}"), label).unwrap());
            }
        }
        Dataset::new(records, "synthetic")
    }

    fn with_counts(counts: [usize; 3]) -> Dataset {
        let mut records = Vec::new();
        for (label, &k) in SentimentLabel::ALL.iter().zip(&counts) {
            for i in 0..k {
                records.push(HeadlineRecord::new(format!("{label} text {i}"), *label).unwrap());
            }
        }
        Dataset::new(records, "synthetic")
    }

    #[test]
    fn label_parsing_is_case_insensitive_and_strict() {
        assert_eq!("POSITIVE".parse::<SentimentLabel>(), Ok(SentimentLabel::Positive));
        assert_eq!("Neutral".parse::<SentimentLabel>(), Ok(SentimentLabel::Neutral));
        assert!("pos".parse::<SentimentLabel>().is_err());
        assert!("mixed".parse::<SentimentLabel>().is_err());
    }

    #[test]
    fn parses_label_first_row() {
        let line = "neutral,According to Gran , the company has no plans to move all production to Russia .";
        let ds = parse_corpus(line.as_bytes(), CorpusFormat::CsvLabelFirst, TextEncoding::Utf8).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records[0].label, SentimentLabel::Neutral);
        assert_eq!(ds.records[0].text, &line[8..]);
    }

    #[test]
    fn empty_input_is_an_error() {
        for format in [CorpusFormat::CsvLabelFirst, CorpusFormat::CsvHeadered, CorpusFormat::AtSeparated] {
            let err = parse_corpus(b"", format, TextEncoding::Utf8).unwrap_err();
            assert!(matches!(err, Error::EmptyCorpus), "{format:?}: {err}");
        }
    }

    #[test]
    fn synthetic_counts() {
        let ds = parse_corpus(SYNTHETIC.as_bytes(), CorpusFormat::CsvLabelFirst, TextEncoding::Utf8).unwrap();
        assert_eq!(class_counts(&ds), [2, 2, 1]);
    }

    #[test]
    fn header_row_is_skipped() {
        let text = format!("Sentiment,Headline\n{SYNTHETIC}");
        let ds = parse_corpus(text.as_bytes(), CorpusFormat::CsvHeadered, TextEncoding::Utf8).unwrap();
        assert_eq!(ds.len(), 5);
    }

    #[test]
    fn unknown_label_reports_row() {
        let text = "positive,a\nbullish,b\n";
        match parse_corpus(text.as_bytes(), CorpusFormat::CsvLabelFirst, TextEncoding::Utf8) {
            Err(Error::UnknownLabel { row, label }) => {
                assert_eq!(row, 2);
                assert_eq!(label, "bullish");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_an_error() {
        let err = parse_corpus(b"positive\n", CorpusFormat::CsvLabelFirst, TextEncoding::Utf8).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
        let err = parse_corpus(b"no separator here\n", CorpusFormat::AtSeparated, TextEncoding::Utf8).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
    }

    #[test]
    fn at_separated_with_latin1() {
        let mut bytes = b"Kone's sales in Espoo rose 5 % .@positive\n\nsales to caf".to_vec();
        bytes.push(0xE9); // é in Latin-1
        bytes.extend_from_slice(b" chain@neutral\n");
        assert!(parse_corpus(&bytes, CorpusFormat::AtSeparated, TextEncoding::Utf8).is_err());
        let ds = parse_corpus(&bytes, CorpusFormat::AtSeparated, TextEncoding::Latin1).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records[1].text, "sales to café chain");
    }

    #[test]
    fn csv_round_trip() {
        let ds = parse_corpus(SYNTHETIC.as_bytes(), CorpusFormat::CsvLabelFirst, TextEncoding::Utf8).unwrap();
        let csv = to_csv(&ds).unwrap();
        assert!(csv.starts_with("sentiment,headline\n"));
        let back = parse_corpus(csv.as_bytes(), CorpusFormat::CsvHeadered, TextEncoding::Utf8).unwrap();
        assert_eq!(back.records, ds.records);
    }

    #[test]
    fn balanced_split_gives_exact_per_class_quotas() {
        let ds = balanced(300);
        let (train, test) = stratified_split(&ds, 300, 300, 42).unwrap();
        assert_eq!(class_counts(&train), [100, 100, 100]);
        assert_eq!(class_counts(&test), [100, 100, 100]);
    }

    #[test]
    fn full_train_split_is_a_permutation() {
        let ds = with_counts([4, 3, 2]);
        let (train, test) = stratified_split(&ds, ds.len(), 0, 1).unwrap();
        assert!(test.is_empty());
        let mut a = train.records.clone();
        let mut b = ds.records.clone();
        a.sort_by(|x, y| x.text.cmp(&y.text));
        b.sort_by(|x, y| x.text.cmp(&y.text));
        assert_eq!(a, b);
    }

    #[test]
    fn unbalanced_split_is_proportional() {
        let ds = with_counts([30, 20, 10]);
        let (train, test) = stratified_split(&ds, 30, 30, 9).unwrap();
        for (got, want) in class_counts(&train).iter().zip([15usize, 10, 5]) {
            assert!(got.abs_diff(want) <= 1);
        }
        assert_eq!(test.len(), 30);
    }

    #[test]
    fn split_errors() {
        let ds = with_counts([3, 3, 0]);
        assert!(matches!(stratified_split(&ds, 2, 2, 0), Err(Error::MissingClass(_))));
        let ds = with_counts([3, 3, 3]);
        assert!(matches!(stratified_split(&ds, 5, 5, 0), Err(Error::InsufficientRecords(_))));
    }

    #[test]
    fn upsample_examples() {
        let ds = balanced(50);
        let out = upsample(&ds, 50, 3).unwrap();
        assert_eq!(class_counts(&out), [50, 50, 50]);
        let mut a: Vec<_> = out.texts().collect();
        let mut b: Vec<_> = ds.texts().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        let ds = with_counts([5, 2, 1]);
        let out = upsample(&ds, 5, 3).unwrap();
        assert_eq!(class_counts(&out), [5, 5, 5]);
        assert!(out.records.iter().all(|r| ds.records.contains(r)));

        assert!(matches!(upsample(&with_counts([2, 0, 1]), 4, 0), Err(Error::MissingClass(_))));
    }

    #[test]
    fn provenance_records_seed() {
        let out = upsample(&balanced(3), 3, 77).unwrap();
        assert!(out.provenance.contains("seed=77"));
        let (train, _) = stratified_split(&balanced(3), 3, 3, 5).unwrap();
        assert!(train.provenance.contains("seed=5"));
    }
}
