//! JSON bodies of the fill-mask protocol.
//!
//! `POST /v1/fill-mask` takes a [`FillMaskRequest`] and answers with a
//! [`FillMaskResponse`] (200) or an [`ErrorResponse`] (4xx/5xx).
//! `GET /v1/info` answers with an [`InfoResponse`].
//!
//! Log-probabilities of `-inf` have no JSON number form and travel as `null`.

use serde::{Deserialize, Serialize};

use super::{Distribution, ScoreError};
use crate::tokenizer::TokenId;

pub const FILL_MASK_PATH: &str = "/v1/fill-mask";
pub const INFO_PATH: &str = "/v1/info";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskRequest {
    pub model: String,
    pub token_ids: Vec<TokenId>,
    pub mask_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResponse {
    pub vocab_size: usize,
    pub logprobs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub model: String,
    pub vocab_size: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

impl FillMaskResponse {
    pub fn from_distribution(d: &Distribution) -> Self {
        FillMaskResponse {
            vocab_size: d.len(),
            logprobs: d
                .logprobs()
                .iter()
                .map(|lp| if *lp == f64::NEG_INFINITY { None } else { Some(*lp) })
                .collect(),
        }
    }

    pub fn into_distribution(self) -> Result<Distribution, ScoreError> {
        if self.logprobs.len() != self.vocab_size {
            return Err(ScoreError::Protocol {
                status: 200,
                message: format!(
                    "response carries {} logprobs but reports vocab_size {}",
                    self.logprobs.len(),
                    self.vocab_size
                ),
            });
        }
        Distribution::from_logprobs(
            self.logprobs
                .into_iter()
                .map(|lp| lp.unwrap_or(f64::NEG_INFINITY))
                .collect(),
        )
    }
}

pub fn encode_distribution(d: &Distribution) -> String {
    serde_json::to_string(&FillMaskResponse::from_distribution(d)).expect("serializable")
}

pub fn decode_distribution(body: &str) -> Result<Distribution, ScoreError> {
    let response: FillMaskResponse = serde_json::from_str(body).map_err(|e| ScoreError::Protocol {
        status: 200,
        message: format!("malformed response body: {e}"),
    })?;
    response.into_distribution()
}
