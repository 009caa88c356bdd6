//! Masked-token scoring: the [`Scorer`] contract, the [`Distribution`] it returns,
//! and two backends.

mod cooccurrence;
mod remote;
pub mod wire;

pub use cooccurrence::{CooccurrenceScorer, DEFAULT_SMOOTHING};
pub use remote::{RemoteOptions, RemoteScorer, ENDPOINT_ENV};

use std::cmp::Ordering;

use crate::tokenizer::{TokenId, TokenSeq};

/// Longest sequence (including [CLS] and [SEP]) any backend accepts.
pub const MAX_SEQ_LEN: usize = 512;

/// Tolerance on `sum(exp(logprobs)) == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    Length { len: usize, max: usize },
    #[error("invalid query: {0}")]
    BadQuery(String),
    #[error("transport error after {attempts} attempt(s) (retryable: {retryable}): {message}")]
    Transport {
        message: String,
        attempts: u32,
        retryable: bool,
    },
    #[error("server returned status {status}: {message}")]
    Protocol { status: u16, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerInfo {
    pub model: String,
    pub vocab_size: usize,
    pub max_len: usize,
}

/// A masked language model, or a stand-in for one. Implementations must be
/// callable from many threads at once.
pub trait Scorer: Send + Sync {
    fn info(&self) -> ScorerInfo;

    /// Full-vocabulary log-probabilities for the token at `mask_index`.
    fn score_masked(&self, tokens: &TokenSeq, mask_index: usize) -> Result<Distribution, ScoreError>;
}

/// Checks the parts of a query every backend requires.
pub(crate) fn validate_query(
    tokens: &TokenSeq,
    mask_index: usize,
    mask_id: TokenId,
    max_len: usize,
) -> Result<(), ScoreError> {
    if tokens.len() > max_len {
        return Err(ScoreError::Length {
            len: tokens.len(),
            max: max_len,
        });
    }
    match tokens.ids.get(mask_index) {
        Some(id) if *id == mask_id => Ok(()),
        Some(id) => Err(ScoreError::BadQuery(format!(
            "token {id} at index {mask_index} is not the mask token"
        ))),
        None => Err(ScoreError::BadQuery(format!(
            "mask index {mask_index} out of range for {} tokens",
            tokens.len()
        ))),
    }
}

/// Natural-log probabilities over the whole vocabulary, indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    logprobs: Vec<f64>,
}

impl Distribution {
    /// Validates entries (finite or -inf) and the normalization contract.
    pub fn from_logprobs(logprobs: Vec<f64>) -> Result<Self, ScoreError> {
        if logprobs.is_empty() {
            return Err(ScoreError::InvalidDistribution("empty".into()));
        }
        if let Some((i, v)) = logprobs
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
        {
            return Err(ScoreError::InvalidDistribution(format!("entry {i} is {v}")));
        }
        let mass: f64 = logprobs.iter().map(|lp| lp.exp()).sum();
        if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ScoreError::InvalidDistribution(format!(
                "probabilities sum to {mass}"
            )));
        }
        Ok(Distribution { logprobs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self, ScoreError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ScoreError::InvalidDistribution("weights must be non-negative with positive sum".into()));
        }
        let log_total = total.ln();
        Self::from_logprobs(weights.iter().map(|w| w.ln() - log_total).collect())
    }

    /// Normalizes arbitrary finite logits with a stabilized log-softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self, ScoreError> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(ScoreError::InvalidDistribution("no finite logit".into()));
        }
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Self::from_logprobs(logits.iter().map(|l| l - lse).collect())
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    /// Ranking order: descending log-probability, ties by ascending id.
    pub fn rank_cmp(&self, a: TokenId, b: TokenId) -> Ordering {
        let (la, lb) = (self.logprobs[a as usize], self.logprobs[b as usize]);
        // NaN is rejected at construction
        lb.partial_cmp(&la).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    }

    /// The `k` highest-ranked token ids in rank order.
    pub fn top_k(&self, k: usize) -> Vec<TokenId> {
        let k = k.min(self.len());
        let mut ids: Vec<TokenId> = (0..self.len() as TokenId).collect();
        if k == 0 {
            return Vec::new();
        }
        if k < ids.len() {
            ids.select_nth_unstable_by(k - 1, |a, b| self.rank_cmp(*a, *b));
            ids.truncate(k);
        }
        ids.sort_by(|a, b| self.rank_cmp(*a, *b));
        ids
    }
}
