use std::io::Read;
use std::time::Duration;

use super::wire::{ErrorResponse, FillMaskRequest, FillMaskResponse, InfoResponse, FILL_MASK_PATH, INFO_PATH};
use super::{validate_query, Distribution, ScoreError, Scorer, ScorerInfo};
use crate::tokenizer::{TokenSeq, Vocab};

/// Environment variable holding the default model-server endpoint.
pub const ENDPOINT_ENV: &str = "CKPROBE_ENDPOINT";

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub max_connections: usize,
    /// Extra attempts after a transport failure. Protocol errors are never retried.
    pub retries: u32,
    pub retry_backoff: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            timeout: Duration::from_secs(60),
            max_connections: 8,
            retries: 2,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

/// HTTP client for a fill-mask model server.
#[derive(Debug)]
pub struct RemoteScorer {
    agent: ureq::Agent,
    base: String,
    info: ScorerInfo,
    mask_id: u32,
    options: RemoteOptions,
}

impl RemoteScorer {
    /// Queries `/v1/info` and checks the served vocabulary against `vocab`.
    pub fn connect(endpoint: &str, vocab: &Vocab, options: RemoteOptions) -> Result<Self, ScoreError> {
        let agent = ureq::AgentBuilder::new()
            .timeout(options.timeout)
            .max_idle_connections(options.max_connections)
            .max_idle_connections_per_host(options.max_connections)
            .build();
        let base = endpoint.trim_end_matches('/').to_string();
        let mut scorer = RemoteScorer {
            agent,
            base,
            info: ScorerInfo {
                model: String::new(),
                vocab_size: vocab.len(),
                max_len: super::MAX_SEQ_LEN,
            },
            mask_id: vocab.mask_id(),
            options,
        };
        let body = scorer.with_retries(|| scorer.agent.get(&scorer.url(INFO_PATH)).call())?;
        let info: InfoResponse = serde_json::from_str(&body).map_err(|e| ScoreError::Protocol {
            status: 200,
            message: format!("malformed info body: {e}"),
        })?;
        if info.vocab_size != vocab.len() {
            return Err(ScoreError::Config(format!(
                "server vocabulary has {} tokens but the local vocabulary has {}",
                info.vocab_size,
                vocab.len()
            )));
        }
        scorer.info = ScorerInfo {
            model: info.model,
            vocab_size: info.vocab_size,
            max_len: info.max_len.min(super::MAX_SEQ_LEN),
        };
        Ok(scorer)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn with_retries<F>(&self, mut call: F) -> Result<String, ScoreError>
    where
        F: FnMut() -> Result<ureq::Response, ureq::Error>,
    {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match call() {
                Ok(resp) => return read_body(resp),
                Err(ureq::Error::Status(status, resp)) => {
                    let body = read_body(resp).unwrap_or_default();
                    let message = serde_json::from_str::<ErrorResponse>(&body)
                        .map(|e| e.error)
                        .unwrap_or(body);
                    return Err(ScoreError::Protocol { status, message });
                }
                Err(ureq::Error::Transport(t)) => {
                    if attempts > self.options.retries {
                        return Err(ScoreError::Transport {
                            message: t.to_string(),
                            attempts,
                            retryable: true,
                        });
                    }
                    tracing::debug!(attempt = attempts, error = %t, "retrying fill-mask request");
                    std::thread::sleep(self.options.retry_backoff * attempts);
                }
            }
        }
    }
}

fn read_body(resp: ureq::Response) -> Result<String, ScoreError> {
    let mut body = String::new();
    resp.into_reader()
        .read_to_string(&mut body)
        .map_err(|e| ScoreError::Transport {
            message: format!("reading response body: {e}"),
            attempts: 1,
            retryable: true,
        })?;
    Ok(body)
}

impl Scorer for RemoteScorer {
    fn info(&self) -> ScorerInfo {
        self.info.clone()
    }

    fn score_masked(&self, tokens: &TokenSeq, mask_index: usize) -> Result<Distribution, ScoreError> {
        validate_query(tokens, mask_index, self.mask_id, self.info.max_len)?;
        let request = FillMaskRequest {
            model: self.info.model.clone(),
            token_ids: tokens.ids.clone(),
            mask_index,
        };
        let payload = serde_json::to_string(&request).expect("serializable");
        let body = self.with_retries(|| {
            self.agent
                .post(&self.url(FILL_MASK_PATH))
                .set("Content-Type", "application/json")
                .send_string(&payload)
        })?;
        let response: FillMaskResponse = serde_json::from_str(&body).map_err(|e| ScoreError::Protocol {
            status: 200,
            message: format!("malformed fill-mask body: {e}"),
        })?;
        if response.vocab_size != self.info.vocab_size {
            return Err(ScoreError::Config(format!(
                "response vocabulary has {} tokens but the local vocabulary has {}",
                response.vocab_size, self.info.vocab_size
            )));
        }
        response.into_distribution()
    }
}
