//! Chat-completion service adapters.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Model name used for QA generation unless overridden.
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("service returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    Shape(String),
}

/// A single-turn chat completion: one user message in, assistant text out.
pub trait ChatService: Send + Sync {
    fn complete(&self, model: &str, prompt: &str) -> Result<String, ServiceError>;
}

impl<T: ChatService + ?Sized> ChatService for &T {
    fn complete(&self, model: &str, prompt: &str) -> Result<String, ServiceError> {
        (**self).complete(model, prompt)
    }
}

impl<T: ChatService + ?Sized> ChatService for Box<T> {
    fn complete(&self, model: &str, prompt: &str) -> Result<String, ServiceError> {
        (**self).complete(model, prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    pub initial_ms: u64,
    pub factor: f64,
    pub max_ms: u64,
}

impl Backoff {
    pub const NONE: Backoff = Backoff {
        initial_ms: 0,
        factor: 1.0,
        max_ms: 0,
    };

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.initial_ms as f64 * self.factor.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_ms as f64) as u64)
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial_ms: 500,
            factor: 2.0,
            max_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatClientConfig {
    pub endpoint: String,
    pub model_name: String,
    pub max_concurrency: usize,
    /// Retries after the first attempt.
    pub retry_limit: u32,
    pub backoff: Backoff,
}

impl ChatClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_name: DEFAULT_MODEL.to_string(),
            max_concurrency: 4,
            retry_limit: 3,
            backoff: Backoff::default(),
        }
    }
}

/// Calls `f` until it succeeds or `retry_limit` retries are spent.
/// Returns the final result and the number of attempts made.
pub fn with_retry<T, E>(
    retry_limit: u32,
    backoff: &Backoff,
    mut f: impl FnMut() -> Result<T, E>,
) -> (Result<T, E>, u32) {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match f() {
            Ok(v) => return (Ok(v), attempt),
            Err(e) if attempt > retry_limit => return (Err(e), attempt),
            Err(_) => {
                let delay = backoff.delay(attempt - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

/// OpenAI-compatible `chat/completions` endpoint.
pub struct HttpChatService {
    endpoint: String,
    api_key: Option<String>,
    seed: Option<u64>,
    agent: ureq::Agent,
}

impl HttpChatService {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            seed: None,
            agent,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Forwarded as the request `seed` for providers that support it.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

impl ChatService for HttpChatService {
    fn complete(&self, model: &str, prompt: &str) -> Result<String, ServiceError> {
        let mut body = json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ServiceError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ServiceError::Status { status, body });
        }
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ServiceError::Shape(e.to_string()))?;
        assistant_text(&value)
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response.
pub fn assistant_text(value: &serde_json::Value) -> Result<String, ServiceError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| ServiceError::Shape("missing choices[0].message.content".into()))
}
