//! Prompt construction, label extraction and batched prediction through a
//! pluggable text-generation backend.

mod backends;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backends::{
    EchoBackend, EncoderBackend, HttpBackend, HttpConfig, OracleBackend, RandomDelayBackend, SamplingBackend,
    UnparseableBackend,
};

use crate::corpus::{Dataset, SentimentLabel};
use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax_unchecked};

pub const PLACEHOLDER: &str = "{headline}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Text with exactly one `{headline}`.
    pub instruction: String,
    /// Printed after the instruction; the answer follows it.
    pub answer_marker: String,
    /// Label words in canonical class order (positive, neutral, negative).
    pub allowed_labels: [String; 3],
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: "Analyze the sentiment of this news headline. Answer with exactly one word: positive, \
                          neutral, or negative.\nHeadline: {headline}\n"
                .into(),
            answer_marker: "Answer:".into(),
            allowed_labels: SentimentLabel::ALL.map(|l| l.as_str().to_string()),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        match self.instruction.matches(PLACEHOLDER).count() {
            1 => {}
            0 => return Err(Error::Template(format!("instruction has no {PLACEHOLDER} placeholder"))),
            n => return Err(Error::Template(format!("instruction has {n} {PLACEHOLDER} placeholders"))),
        }
        if self.answer_marker.trim().is_empty() {
            return Err(Error::Template("answer_marker is empty".into()));
        }
        for (i, word) in self.allowed_labels.iter().enumerate() {
            if word.is_empty() || !word.chars().all(char::is_alphanumeric) {
                return Err(Error::Template(format!("label word {word:?} must be a single alphanumeric word")));
            }
            if self.allowed_labels[..i].iter().any(|w| w.eq_ignore_ascii_case(word)) {
                return Err(Error::Template(format!("label word {word:?} is repeated")));
            }
        }
        Ok(())
    }

    fn word(&self, label: SentimentLabel) -> &str {
        &self.allowed_labels[label.index()]
    }

    /// Recovers the headline from a prompt built with this template.
    pub fn headline_of<'a>(&self, prompt: &'a str) -> Option<&'a str> {
        let (pre, post) = self.instruction.split_once(PLACEHOLDER)?;
        let rest = prompt.strip_prefix(pre)?;
        let end = rest.rfind(&format!("{post}{}", self.answer_marker))?;
        Some(&rest[..end])
    }
}

/// Instruction with the headline substituted, then the marker.
pub fn build_eval_prompt(headline: &str, template: &PromptTemplate) -> Result<String> {
    template.validate()?;
    Ok(format!("{}{}", template.instruction.replacen(PLACEHOLDER, headline, 1), template.answer_marker))
}

/// The evaluation prompt followed by the expected label word.
pub fn build_train_prompt(headline: &str, label: SentimentLabel, template: &PromptTemplate) -> Result<String> {
    Ok(format!("{} {}", build_eval_prompt(headline, template)?, template.word(label)))
}

/// First allowed label word, case-insensitive and on word boundaries, in the
/// text after the last answer marker (the whole text when the marker is
/// absent). `None` is NoLabel.
pub fn extract_label(generated: &str, template: &PromptTemplate) -> Option<SentimentLabel> {
    let tail = match generated.rfind(&template.answer_marker) {
        Some(at) => &generated[at + template.answer_marker.len()..],
        None => generated,
    };
    tail.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).find_map(|w| {
        let w = w.to_lowercase();
        template.allowed_labels.iter().position(|l| l.to_lowercase() == w).and_then(SentimentLabel::from_index)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { max_new_tokens: 4, temperature: 0.0 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::InvalidArgument("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// Anything that turns a prompt into generated text. Implementations must be
/// safe to call from several threads at once.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, prompt: &str, config: &GenConfig) -> Result<String>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for Box<B> {
    fn generate(&self, prompt: &str, config: &GenConfig) -> Result<String> {
        (**self).generate(prompt, config)
    }
}

/// Index drawn from `softmax(logits / T)`; argmax (lowest index on ties) at
/// `T = 0`. Logits must be finite.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    if temperature == 0.0 {
        return argmax(logits);
    }
    let p = softmax_unchecked(&logits.iter().map(|l| l / temperature).collect::<Vec<_>>());
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoLabelPolicy {
    /// Keep NoLabel; metrics score it as a misclassification.
    #[default]
    CountAsError,
    MapTo(SentimentLabel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(200), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Retries without sleeping.
    pub fn immediate(attempts: usize) -> Self {
        Self { attempts, initial_backoff: Duration::ZERO, multiplier: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub gen: GenConfig,
    pub no_label: NoLabelPolicy,
    pub retry: RetryPolicy,
    /// Maximum requests in flight.
    pub concurrency: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            no_label: NoLabelPolicy::default(),
            retry: RetryPolicy::default(),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Generated text, when the backend answered.
    pub generated: Option<String>,
    /// `None` is NoLabel (or an unanswered record).
    pub label: Option<SentimentLabel>,
    /// Label extracted before the NoLabel policy was applied.
    pub extracted: Option<SentimentLabel>,
    pub attempts: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    /// Aligned with the input records.
    pub records: Vec<PredictionRecord>,
    /// Answers from which no label word could be extracted.
    pub no_label: usize,
}

impl Predictions {
    pub fn labels(&self) -> Vec<Option<SentimentLabel>> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.records.iter().enumerate().filter_map(|(i, r)| r.error.as_deref().map(|e| (i, e))).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Invalid(#[from] Error),
    /// A record exhausted its retries. Records not yet sent are marked as
    /// skipped; completed ones are kept.
    #[error("backend failed on record {first_failure}; {completed} of {total} records completed")]
    Aborted { partial: Box<Predictions>, first_failure: usize, completed: usize, total: usize },
}

fn call_with_retry(
    backend: &dyn GenerationBackend,
    prompt: &str,
    gen: &GenConfig,
    retry: &RetryPolicy,
) -> (std::result::Result<String, String>, usize) {
    let mut wait = retry.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=retry.attempts.max(1) {
        match backend.generate(prompt, gen) {
            Ok(text) => return (Ok(text), attempt),
            Err(e) => last = e.to_string(),
        }
        if attempt < retry.attempts {
            thread::sleep(wait);
            wait = wait.mul_f64(retry.multiplier);
        }
    }
    (Err(last), retry.attempts.max(1))
}

/// One prediction per record, in input order, with up to
/// `options.concurrency` requests in flight.
pub fn predict_sentiments(
    dataset: &Dataset,
    backend: &dyn GenerationBackend,
    template: &PromptTemplate,
    options: &PredictOptions,
) -> std::result::Result<Predictions, PredictError> {
    template.validate()?;
    options.gen.validate()?;
    if options.concurrency == 0 {
        return Err(Error::InvalidArgument("concurrency must be at least 1".into()).into());
    }
    let prompts = dataset.records.iter().map(|r| build_eval_prompt(&r.text, template)).collect::<Result<Vec<_>>>()?;

    let n = prompts.len();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<PredictionRecord>>> = Mutex::new(vec![None; n]);
    thread::scope(|s| {
        for _ in 0..options.concurrency.min(n) {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let (result, attempts) = call_with_retry(backend, &prompts[i], &options.gen, &options.retry);
                let record = match result {
                    Ok(text) => {
                        let extracted = extract_label(&text, template);
                        let label = match (extracted, options.no_label) {
                            (None, NoLabelPolicy::MapTo(l)) => Some(l),
                            (x, _) => x,
                        };
                        PredictionRecord { generated: Some(text), label, extracted, attempts, error: None }
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        PredictionRecord { generated: None, label: None, extracted: None, attempts, error: Some(e) }
                    }
                };
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(record);
            });
        }
    });

    let slots = slots.into_inner().expect("workers have finished");
    let completed = slots.iter().flatten().filter(|r| r.error.is_none()).count();
    let first_failure = slots.iter().position(|r| r.as_ref().is_some_and(|r| r.error.is_some()));
    let records: Vec<PredictionRecord> = slots
        .into_iter()
        .map(|r| {
            r.unwrap_or(PredictionRecord {
                generated: None,
                label: None,
                extracted: None,
                attempts: 0,
                error: Some("skipped after an earlier backend failure".into()),
            })
        })
        .collect();
    let no_label = records.iter().filter(|r| r.generated.is_some() && r.extracted.is_none()).count();
    let predictions = Predictions { records, no_label };
    match first_failure {
        None => Ok(predictions),
        Some(first_failure) => {
            Err(PredictError::Aborted { partial: Box::new(predictions), first_failure, completed, total: n })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    #[test]
    fn default_eval_prompt_wording() {
        let p = build_eval_prompt("{X}", &PromptTemplate::default()).unwrap();
        assert_eq!(
            p,
            "Analyze the sentiment of this news headline. Answer with exactly one word: positive, neutral, or \
             negative.\nHeadline: {X}\nAnswer:"
        );
    }

    #[test]
    fn train_prompt_extends_eval_prompt() {
        let t = PromptTemplate::default();
        for label in SentimentLabel::ALL {
            let train = build_train_prompt("Shares rose", label, &t).unwrap();
            let eval = build_eval_prompt("Shares rose", &t).unwrap();
            assert!(train.starts_with(&eval) && train.len() > eval.len());
            assert!(train.ends_with(label.as_str()));
            assert_eq!(train.matches("Shares rose").count(), 1);
            assert_eq!(extract_label(&train, &t), Some(label));
            assert!(eval.ends_with(&t.answer_marker));
            assert_eq!(extract_label(&eval, &t), None);
        }
    }

    #[test]
    fn template_validation() {
        let mut t = PromptTemplate::default();
        t.instruction = "no slot".into();
        assert!(matches!(build_eval_prompt("h", &t), Err(Error::Template(_))));
        t.instruction = "{headline} {headline}".into();
        assert!(t.validate().is_err());
        t.instruction = "{headline}".into();
        t.answer_marker = " ".into();
        assert!(t.validate().is_err());
        let mut t = PromptTemplate::default();
        t.allowed_labels[2] = "Positive".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn extraction_examples() {
        let t = PromptTemplate::default();
        assert_eq!(extract_label("... Answer: neutral", &t), Some(SentimentLabel::Neutral));
        assert_eq!(extract_label("The sentiment is Positive.", &t), Some(SentimentLabel::Positive));
        assert_eq!(extract_label("no opinion expressed", &t), None);
        assert_eq!(extract_label("Answer: negatively positive", &t), Some(SentimentLabel::Positive));
        assert_eq!(extract_label("positive\nAnswer: NEGATIVE!", &t), Some(SentimentLabel::Negative));
    }

    #[test]
    fn headline_recovery() {
        let t = PromptTemplate::default();
        let h = "Profit up, Answer: unclear";
        assert_eq!(t.headline_of(&build_eval_prompt(h, &t).unwrap()), Some(h));
        assert_eq!(t.headline_of("something else"), None);
    }

    #[test]
    fn sampling_examples() {
        let mut rng = substream(1, "test", 0);
        assert_eq!(sample_token(&[1.0, 3.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(sample_token(&[2.0, 2.0, 1.0], 0.0, &mut rng), 0);

        let draws = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[sample_token(&[2f64.ln(), 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        assert!((counts[0] as f64 / draws as f64 - 0.5).abs() <= 0.03);

        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[sample_token(&[5.0, -3.0, 1.0], 1e9, &mut rng)] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 / draws as f64 - 1.0 / 3.0).abs() <= 0.03));
    }

    proptest! {
        #[test]
        fn zero_temperature_ignores_rng(logits in prop::collection::vec(-10.0f64..10.0, 1..8), s1: u64, s2: u64) {
            let a = sample_token(&logits, 0.0, &mut substream(s1, "t", 0));
            let b = sample_token(&logits, 0.0, &mut substream(s2, "t", 0));
            prop_assert_eq!(a, b);
            prop_assert_eq!(a, argmax(&logits));
        }

        #[test]
        fn round_trip_for_label_free_headlines(h in "[a-z ]{0,40}", idx in 0usize..3) {
            let t = PromptTemplate::default();
            let label = SentimentLabel::ALL[idx];
            prop_assert_eq!(extract_label(&build_train_prompt(&h, label, &t).unwrap(), &t), Some(label));
        }
    }
}
