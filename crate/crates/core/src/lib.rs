//! Financial headline sentiment pipeline.
//!
//! Data preparation ([`corpus`], [`augment`]), featurization
//! ([`features`]), two trainable classifiers ([`linear`] and the
//! transformer [`encoder`] with low-rank adapters), prompt-driven
//! prediction against pluggable backends ([`promptkit`]), evaluation
//! ([`metrics`]) and exploratory statistics ([`analysis`]).

pub mod analysis;
pub mod augment;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod features;
pub mod linear;
pub mod metrics;
pub mod numeric;
pub mod promptkit;
pub mod rng;
pub mod tensor;

pub use corpus::{Dataset, HeadlineRecord, SentimentLabel};
pub use error::{Error, Result};
