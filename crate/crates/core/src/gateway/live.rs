use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FinishReason, GatewayError, ModelBackend, ModelRequest, ModelResponse, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay_ms: 1000, max_delay_ms: 30_000, jitter: true }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (retry.saturating_sub(1)).min(20))
            .min(self.max_delay_ms);
        let ms = if self.jitter && exp > 0 {
            rand::rng().random_range(exp / 2..=exp)
        } else {
            exp
        };
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Base URL of an OpenAI-style API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    /// Models whose endpoints reject a `temperature` field.
    #[serde(default)]
    pub omit_temperature_models: BTreeSet<String>,
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, credential_env: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            credential_env: credential_env.into(),
            omit_temperature_models: BTreeSet::new(),
            timeout_secs: 300,
            retry: RetryPolicy::default(),
        }
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Wire body for a chat-completion call.
pub fn build_payload(request: &ModelRequest, omit_temperature: bool) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
        .collect();
    let mut body = json!({
        "model": request.model_name,
        "messages": messages,
        "max_tokens": request.max_tokens,
    });
    if !omit_temperature {
        body["temperature"] = json!(request.temperature);
    }
    body
}

fn parse_response(body: &str, latency_ms: u64) -> Result<ModelResponse, GatewayError> {
    let value: Value = serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Decode("response has no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") if !content.is_empty() => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Error,
    };
    let count = |key: &str| value.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ModelResponse {
        content,
        finish_reason,
        usage: Usage { prompt_tokens: count("prompt_tokens"), completion_tokens: count("completion_tokens") },
        latency_ms,
    })
}

enum Attempt {
    Done(ModelResponse),
    Retry(String),
    Fatal(GatewayError),
}

/// Chat-completion client for hosted providers.
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, url: &str, key: &str, body: &str) -> Attempt {
        let started = Instant::now();
        let result = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .header("Authorization", &format!("Bearer {key}"))
            .send(body);
        let mut response = match result {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                return Attempt::Retry(e.to_string())
            }
            Err(e) => return Attempt::Fatal(GatewayError::Transport { attempts: 1, message: e.to_string() }),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match parse_response(&text, started.elapsed().as_millis() as u64) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(GatewayError::ProviderRefusal { status, body: text }),
        }
    }
}

impl ModelBackend for LiveBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let key = std::env::var(&self.config.credential_env).map_err(|_| GatewayError::Transport {
            attempts: 0,
            message: format!("credential variable {} is not set", self.config.credential_env),
        })?;
        let omit = self.config.omit_temperature_models.contains(&request.model_name);
        let body = build_payload(request, omit).to_string();
        let url = self.config.url();
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.delay(attempt - 1));
            }
            match self.attempt(&url, &key, &body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("{} attempt {attempt}/{max_attempts} failed: {msg}", request.model_name);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport { attempts: max_attempts, message: last })
    }
}
