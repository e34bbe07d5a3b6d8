use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, CompletionRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    /// Environment variable holding the bearer token. Unset means no auth header.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        HttpProviderConfig {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: None,
            timeout_secs: 120,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_cap_ms: 8_000,
        }
    }
}

/// Client for a chat-completions compatible endpoint.
pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(HttpProvider {
            config,
            client,
            api_key,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.backoff_cap_ms);
        Duration::from_millis(ms)
    }

    fn send_once(&self, body: &Value) -> Result<String, ProviderError> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(ProviderError::HttpStatus {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        parse_response(&text)
    }
}

pub(crate) fn request_body(request: &CompletionRequest) -> Value {
    json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

pub(crate) fn parse_response(text: &str) -> Result<String, ProviderError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::MalformedResponse("missing choices[0].message.content".into()))
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = request_body(request);
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    tracing::warn!(attempt, error = %e, "retrying chat completion");
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn name(&self) -> &str {
        &self.config.base_url
    }
}
