//! Language-model backends: a tokenizer plus next-token logits.

pub mod ngram;
pub mod remote;
pub mod vocab;

use thiserror::Error;

pub use ngram::{train_ngram, NGramModel};
pub use remote::{serve, RemoteModel, ServerHandle};
pub use vocab::Vocab;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("character {ch:?} at offset {offset} is outside the tokenizer alphabet")]
    UnknownCharacter { ch: char, offset: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(TokenId),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("empty context")]
    EmptyContext,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

/// A tokenizer with a next-token scoring function.
///
/// Implementations must be usable from several threads at once.
pub trait LanguageModel: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError>;
    fn decode(&self, ids: &[TokenId]) -> Result<String, LmError>;
    fn vocab_size(&self) -> usize;
    fn newline_id(&self) -> TokenId;
    /// One finite score per vocabulary entry.
    fn next_logits(&self, ids: &[TokenId]) -> Result<Vec<f64>, LmError>;

    /// Id of the first sub-token of `ident`.
    fn first_token(&self, ident: &str) -> Result<Option<TokenId>, LmError> {
        Ok(self.encode(ident)?.first().copied())
    }
}

/// Numerically stable softmax. Entries of `-inf` get probability 0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}
