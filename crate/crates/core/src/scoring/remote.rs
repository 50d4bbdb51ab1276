//! HTTP backend speaking the `/v1/logprobs` protocol.
//!
//! Request: `POST /v1/logprobs` with `{"prompt": str, "completions": [str]}`.
//! Response: `{"logprobs": [[number]]}`, one inner array of per-token natural
//! log-probabilities per completion.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreBackend, ScoreError};

pub const ENV_URL: &str = "LENS_SCORER_URL";
pub const ENV_TIMEOUT_MS: &str = "LENS_SCORER_TIMEOUT_MS";
pub const ENV_RETRIES: &str = "LENS_SCORER_RETRIES";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Pause before retry `k` is `k * backoff_ms`.
    pub backoff_ms: u64,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 250,
        }
    }

    /// Reads `LENS_SCORER_URL`, `LENS_SCORER_TIMEOUT_MS` and `LENS_SCORER_RETRIES`.
    pub fn from_env() -> Result<Self, ScoreError> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| ScoreError::Request(format!("{ENV_URL} is not set")))?;
        let mut cfg = RemoteConfig::new(url);
        cfg.apply_env()?;
        Ok(cfg)
    }

    /// Overrides timeout and retries from the environment when present.
    pub fn apply_env(&mut self) -> Result<(), ScoreError> {
        fn parse<T: std::str::FromStr>(name: &str) -> Result<Option<T>, ScoreError> {
            match std::env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| ScoreError::Request(format!("{name}={v:?} is not a number"))),
                Err(_) => Ok(None),
            }
        }
        if let Some(t) = parse(ENV_TIMEOUT_MS)? {
            self.timeout_ms = t;
        }
        if let Some(r) = parse(ENV_RETRIES)? {
            self.retries = r;
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/v1/logprobs") {
            base.to_string()
        } else {
            format!("{base}/v1/logprobs")
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    completions: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    logprobs: Vec<Vec<f64>>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            endpoint: config.endpoint(),
            config,
            agent,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// One attempt. `Err(Ok(_))` is retriable, `Err(Err(_))` is final.
    fn attempt(
        &self,
        context: &str,
        completions: &[String],
    ) -> Result<Vec<f64>, Result<String, ScoreError>> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(WireRequest {
                prompt: context,
                completions,
            })
            .map_err(|e| Ok(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let code = status.as_u16();
            if status.is_client_error() && code != 408 && code != 429 {
                return Err(Err(ScoreError::Request(format!(
                    "HTTP {status} from {}",
                    self.endpoint
                ))));
            }
            return Err(Ok(format!("HTTP {status}")));
        }
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Ok(e.to_string()))?;
        parse_response(&body, completions.len()).map_err(Err)
    }
}

/// Validates a response body and sums each completion's token log-probs.
pub fn parse_response(body: &str, expected: usize) -> Result<Vec<f64>, ScoreError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| ScoreError::Protocol(format!("malformed response: {e}")))?;
    if wire.logprobs.len() != expected {
        return Err(ScoreError::Protocol(format!(
            "{} log-probability arrays for {expected} completions",
            wire.logprobs.len()
        )));
    }
    wire.logprobs
        .iter()
        .map(|tokens| {
            if tokens.is_empty() {
                return Err(ScoreError::Protocol("completion with no tokens".into()));
            }
            if tokens.iter().any(|t| t.is_nan() || *t > 0.0) {
                return Err(ScoreError::Protocol(format!(
                    "invalid token log-probabilities {tokens:?}"
                )));
            }
            Ok(tokens.iter().sum())
        })
        .collect()
}

impl ScoreBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn logprobs(&self, context: &str, completions: &[String]) -> Result<Vec<f64>, ScoreError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for k in 0..attempts {
            if k > 0 && self.config.backoff_ms > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_ms * k as u64));
            }
            match self.attempt(context, completions) {
                Ok(v) => return Ok(v),
                Err(Err(fatal)) => return Err(fatal),
                Err(Ok(retriable)) => {
                    tracing::debug!("scorer attempt {} of {attempts} failed: {retriable}", k + 1);
                    last = retriable;
                }
            }
        }
        Err(ScoreError::Unavailable { attempts, last })
    }
}
