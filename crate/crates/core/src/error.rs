use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: unknown sentiment label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("input is not valid {encoding}: {message}")]
    Decode { encoding: &'static str, message: String },
    #[error("insufficient records: {0}")]
    InsufficientRecords(String),
    #[error("class {0} is absent from the dataset")]
    MissingClass(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("every position is masked")]
    AllMasked,
    #[error("template error: {0}")]
    Template(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
