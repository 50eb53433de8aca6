//! Text featurization: tokenization, vocabularies, TF-IDF and pooled
//! pretrained embeddings.

mod embedding;
mod tfidf;
mod tokenize;
mod vocab;

pub use embedding::{embed_mean, EmbeddingTable};
pub use tfidf::{tfidf, tfidf_texts, DocTermMatrix, SparseRow};
pub use tokenize::{encode_ids, pad_or_truncate, tokenize, Padded, PAD_ID, RESERVED_IDS, UNK_ID};
pub use vocab::{build_vocabulary, Vocabulary};
