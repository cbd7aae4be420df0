use std::io::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::PromptBundle;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport failure after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response is not a chat completion: {0}")]
    InvalidResponse(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub retries: u32,
    /// Initial retry delay; doubles on every retry.
    pub backoff_ms: u64,
    /// Environment variable holding the API key; no auth header when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Append every request/response pair to this JSONL file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            temperature: 0.1,
            max_tokens: 1024,
            timeout_s: 60.0,
            retries: 3,
            backoff_ms: 500,
            api_key_env: None,
            log_path: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ChatError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ChatError::Config("temperature must lie in [0, 2]".into()));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(ChatError::Config("timeout_s must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(ChatError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    /// Exact request body for `bundle`.
    pub fn request_body(&self, bundle: &PromptBundle) -> Vec<u8> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        serde_json::to_vec(&body).expect("request serializes")
    }

    fn api_key(&self) -> Result<Option<String>, ChatError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ChatError::Auth(format!("environment variable {var} is not set"))),
        }
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(ChatError),
}

fn log_exchange(cfg: &EndpointConfig, body: &[u8], outcome: &str) {
    let Some(path) = &cfg.log_path else { return };
    let request: Value = serde_json::from_slice(body).unwrap_or(Value::Null);
    let line = json!({"request": request, "response": outcome});
    let written = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| writeln!(f, "{line}"));
    if let Err(e) = written {
        log::warn!("cannot append to {}: {e}", path.display());
    }
}

fn content_of(text: &str) -> Result<String, ChatError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| ChatError::InvalidResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ChatError::InvalidResponse("missing choices[0].message.content".into()))
}

/// POST the bundle to `{base_url}/chat/completions` and return the first
/// choice's content. 429, 5xx, timeouts and transport errors are retried with
/// exponential backoff; authentication failures are not.
pub fn chat_complete(cfg: &EndpointConfig, bundle: &PromptBundle) -> Result<String, ChatError> {
    cfg.validate()?;
    let key = cfg.api_key()?;
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let body = cfg.request_body(bundle);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
        .http_status_as_error(false)
        .build()
        .into();

    let attempts = cfg.retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(k) = &key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let outcome = match req.send(&body[..]) {
            Err(e) => Attempt::Retry(e.to_string()),
            Ok(resp) => {
                let status = resp.status().as_u16();
                match resp.into_body().read_to_string() {
                    Err(e) => Attempt::Retry(e.to_string()),
                    Ok(text) => match status {
                        200..=299 => match content_of(&text) {
                            Ok(c) => Attempt::Done(c),
                            Err(e) => Attempt::Fail(e),
                        },
                        401 | 403 => Attempt::Fail(ChatError::Auth(format!("HTTP {status}"))),
                        429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
                        _ => Attempt::Fail(ChatError::Http { status, body: text }),
                    },
                }
            }
        };
        match outcome {
            Attempt::Done(content) => {
                log_exchange(cfg, &body, &content);
                return Ok(content);
            }
            Attempt::Fail(e) => {
                log_exchange(cfg, &body, &e.to_string());
                return Err(e);
            }
            Attempt::Retry(msg) => {
                log::debug!("attempt {} of {attempts} failed: {msg}", attempt + 1);
                log_exchange(cfg, &body, &msg);
                last = msg;
            }
        }
    }
    Err(ChatError::Transport { attempts, last })
}
