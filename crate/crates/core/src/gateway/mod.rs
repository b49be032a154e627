//! Language-model gateway.
//!
//! Every model call made by the pipeline goes through [`Gateway::complete`].
//! Backends are interchangeable: a live HTTP chat-completion client, a
//! cassette replayer, and a scripted queue for tests. Any backend can be
//! wrapped in a [`RecordingBackend`] to capture a cassette as it runs.

mod cassette;
mod live;
mod scripted;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry, RecordingBackend, ReplayBackend};
pub use live::{build_payload, LiveBackend, LiveConfig, RetryPolicy};
pub use scripted::{ScriptEntry, ScriptedBackend};

/// Default completion budget for actor stages.
pub const ACTOR_MAX_TOKENS: u32 = 4096;
/// Default completion budget for critic calls.
pub const CRITIC_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("cassette miss for digest {0}")]
    CassetteMiss(String),
    #[error("scripted backend exhausted")]
    ScriptExhausted,
    #[error("provider refused request with HTTP {status}: {body}")]
    ProviderRefusal { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    Decode(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

/// Which of the two models a request is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleTag {
    Actor,
    Critic,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Actor => "actor",
            RoleTag::Critic => "critic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub role_tag: RoleTag,
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.model_name.is_empty() {
            return invalid("empty model name");
        }
        match self.messages.first() {
            None => return invalid("no messages"),
            Some(m) if m.role == Role::Assistant => {
                return invalid("first message must be system or user")
            }
            _ => {}
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!(
                "empty {} message",
                m.role.as_str()
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature outside [0, 2]");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    /// Concatenation of every message body, used for content scans.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModelResponse {
    /// A stop-terminated response with no usage accounting.
    pub fn text(content: impl Into<String>) -> Self {
        let content = content.into();
        let finish_reason = if content.is_empty() {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        Self { content, finish_reason, usage: Usage::default(), latency_ms: 0 }
    }
}

/// Which backend a gateway is driven by. Live credentials are referenced
/// by environment variable name, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendKind {
    Live { endpoint: String, credential_env: String },
    Replay { cassette: std::path::PathBuf },
    Scripted { script: std::path::PathBuf },
}

pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

impl<F> ModelBackend for F
where
    F: Fn(&ModelRequest) -> Result<ModelResponse, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        self(request)
    }
}

/// Stable content hash used to key cassettes.
///
/// Covers model name, role tag, temperature and every message role and
/// body. `max_tokens` is deliberately left out.
pub fn request_digest(request: &ModelRequest) -> String {
    let mut hasher = Sha256::new();
    let mut field = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    field(request.model_name.as_bytes());
    field(request.role_tag.as_str().as_bytes());
    field(&request.temperature.to_bits().to_le_bytes());
    field(&(request.messages.len() as u64).to_le_bytes());
    for message in &request.messages {
        field(message.role.as_str().as_bytes());
        field(message.content.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Shared front door to a backend.
///
/// Validates requests and optionally keeps a copy of every request it sees,
/// which tests use to inspect prompts.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    captured: Option<Arc<Mutex<Vec<ModelRequest>>>>,
}

impl Gateway {
    pub fn new(backend: impl ModelBackend + 'static) -> Self {
        Self { backend: Arc::new(backend), captured: None }
    }

    pub fn from_arc(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend, captured: None }
    }

    pub fn with_capture(mut self) -> Self {
        self.captured = Some(Arc::default());
        self
    }

    pub fn captured(&self) -> Vec<ModelRequest> {
        self.captured
            .as_ref()
            .map(|c| c.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        if let Some(captured) = &self.captured {
            captured.lock().unwrap().push(request.clone());
        }
        self.backend.complete(request)
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("capturing", &self.captured.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request() -> ModelRequest {
        ModelRequest {
            model_name: "m".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
            temperature: 0.0,
            max_tokens: 16,
            role_tag: RoleTag::Actor,
        }
    }

    #[test]
    fn digest_is_deterministic() {
        assert_eq!(request_digest(&request()), request_digest(&request()));
        assert_eq!(request_digest(&request()).len(), 64);
    }

    #[test]
    fn digest_ignores_max_tokens() {
        let mut other = request();
        other.max_tokens = 9999;
        assert_eq!(request_digest(&request()), request_digest(&other));
    }

    #[test]
    fn digest_covers_role_tag_and_temperature() {
        let mut critic = request();
        critic.role_tag = RoleTag::Critic;
        assert_ne!(request_digest(&request()), request_digest(&critic));
        let mut warm = request();
        warm.temperature = 1.0;
        assert_ne!(request_digest(&request()), request_digest(&warm));
    }

    #[test]
    fn digest_is_not_fooled_by_shifted_boundaries() {
        let mut a = request();
        a.messages = vec![ChatMessage::user("ab"), ChatMessage::user("c")];
        let mut b = request();
        b.messages = vec![ChatMessage::user("a"), ChatMessage::user("bc")];
        assert_ne!(request_digest(&a), request_digest(&b));
    }

    #[test]
    fn validation_rules() {
        let mut r = request();
        r.messages.clear();
        assert!(r.validate().is_err());
        let mut r = request();
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        let mut r = request();
        r.messages.insert(0, ChatMessage { role: Role::Assistant, content: "x".into() });
        assert!(r.validate().is_err());
        assert!(request().validate().is_ok());
    }

    #[test]
    fn gateway_captures_requests() {
        let gw = Gateway::new(|_: &ModelRequest| Ok(ModelResponse::text("ok"))).with_capture();
        gw.complete(&request()).unwrap();
        assert_eq!(gw.captured(), vec![request()]);
    }

    proptest! {
        #[test]
        fn single_byte_perturbation_changes_digest(
            body in "[ -~]{1,64}",
            pos in any::<prop::sample::Index>(),
            replacement in any::<u8>().prop_filter("ascii", |b| b.is_ascii()),
        ) {
            let mut a = request();
            a.messages[1].content = body.clone();
            let mut bytes = body.into_bytes();
            let i = pos.index(bytes.len());
            prop_assume!(bytes[i] != replacement);
            bytes[i] = replacement;
            let mut b = request();
            b.messages[1].content = String::from_utf8(bytes).unwrap();
            prop_assert_ne!(request_digest(&a), request_digest(&b));
        }
    }
}
