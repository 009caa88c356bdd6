use std::collections::HashMap;
use std::sync::Arc;

use super::{validate_query, Distribution, ScoreError, Scorer, ScorerInfo, MAX_SEQ_LEN};
use crate::tokenizer::{TokenId, TokenSeq, Vocab};

pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// A deterministic stand-in for a masked language model.
///
/// `P(t | bag) ∝ smoothing + Σ_{w ∈ bag} count(t, w)`, where `count(t, w)` is the
/// number of ordered position pairs `(i, j)`, `i ≠ j`, in one corpus sentence with
/// token `t` at `i` and `w` at `j`. The bag is every non-special token of the query.
#[derive(Debug, Clone)]
pub struct CooccurrenceScorer {
    vocab: Arc<Vocab>,
    // context token -> (predicted token -> count)
    counts: HashMap<TokenId, HashMap<TokenId, f64>>,
    smoothing: f64,
}

impl CooccurrenceScorer {
    pub fn build<S: AsRef<str>>(
        corpus: &[S],
        vocab: Arc<Vocab>,
        smoothing: f64,
    ) -> Result<Self, ScoreError> {
        if corpus.is_empty() {
            return Err(ScoreError::Config("co-occurrence corpus is empty".into()));
        }
        if !(smoothing > 0.0) || !smoothing.is_finite() {
            return Err(ScoreError::Config(format!("smoothing must be positive, got {smoothing}")));
        }
        let mut counts: HashMap<TokenId, HashMap<TokenId, f64>> = HashMap::new();
        for sentence in corpus {
            let ids: Vec<TokenId> = vocab
                .tokenize(sentence.as_ref())
                .ids
                .into_iter()
                .filter(|id| !vocab.is_special(*id))
                .collect();
            for (i, &context) in ids.iter().enumerate() {
                for (j, &target) in ids.iter().enumerate() {
                    if i != j {
                        *counts.entry(context).or_default().entry(target).or_default() += 1.0;
                    }
                }
            }
        }
        Ok(CooccurrenceScorer {
            vocab,
            counts,
            smoothing,
        })
    }

    /// Raw co-occurrence count of `target` with `context`.
    pub fn count(&self, target: TokenId, context: TokenId) -> f64 {
        self.counts
            .get(&context)
            .and_then(|m| m.get(&target))
            .copied()
            .unwrap_or(0.0)
    }

    /// A copy with every count multiplied by `factor`; the smoothing is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let counts = self
            .counts
            .iter()
            .map(|(w, m)| (*w, m.iter().map(|(t, c)| (*t, c * factor)).collect()))
            .collect();
        CooccurrenceScorer {
            vocab: Arc::clone(&self.vocab),
            counts,
            smoothing: self.smoothing,
        }
    }

    /// Unnormalized scores `smoothing + Σ count` for every vocabulary token.
    pub fn raw_scores(&self, tokens: &TokenSeq) -> Vec<f64> {
        let mut scores = vec![0.0; self.vocab.len()];
        for &w in tokens.ids.iter().filter(|id| !self.vocab.is_special(**id)) {
            if let Some(row) = self.counts.get(&w) {
                for (&t, &c) in row {
                    scores[t as usize] += c;
                }
            }
        }
        for s in &mut scores {
            *s += self.smoothing;
        }
        scores
    }
}

impl Scorer for CooccurrenceScorer {
    fn info(&self) -> ScorerInfo {
        ScorerInfo {
            model: "cooccurrence".into(),
            vocab_size: self.vocab.len(),
            max_len: MAX_SEQ_LEN,
        }
    }

    fn score_masked(&self, tokens: &TokenSeq, mask_index: usize) -> Result<Distribution, ScoreError> {
        validate_query(tokens, mask_index, self.vocab.mask_id(), MAX_SEQ_LEN)?;
        Distribution::from_weights(&self.raw_scores(tokens))
    }
}
