use crate::features::Vocabulary;

/// Id of the padding token in encoder inputs.
pub const PAD_ID: usize = 0;
/// Id of out-of-vocabulary tokens in encoder inputs.
pub const UNK_ID: usize = 1;
/// Vocabulary index `i` maps to encoder id `i + RESERVED_IDS`.
pub const RESERVED_IDS: usize = 2;

/// Lowercased maximal runs of Unicode letters and digits. Everything else
/// separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

/// Maps tokens to encoder ids, sending unknown tokens to [`UNK_ID`].
pub fn encode_ids<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<usize> {
    tokens.iter().map(|t| vocab.index_of(t.as_ref()).map_or(UNK_ID, |i| i + RESERVED_IDS)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
}

/// Truncates to the first `max_len` ids or pads up to `max_len`.
///
/// # Panics
/// If `max_len` is zero.
pub fn pad_or_truncate(ids: &[usize], max_len: usize, pad_token_id: usize) -> Padded {
    assert!(max_len >= 1, "max_len must be at least 1");
    let real = ids.len().min(max_len);
    let mut out = ids[..real].to_vec();
    out.resize(max_len, pad_token_id);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    Padded { ids: out, mask }
}
