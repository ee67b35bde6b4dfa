//! Access to chat-completion and text-embedding models.
//!
//! Every model role in the pipeline (demonstration analysis, SOP extraction,
//! query rewriting, the mobile-use agent) talks to a [`ChatBackend`]; query
//! encoding goes through an [`EmbedBackend`]. Backends are chosen by name from
//! [`chat_backends`] / [`embed_backends`] so offline mocks and HTTP clients are
//! interchangeable.

mod config;
mod embed;
mod http;
mod mock;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::ScreenshotRef;
use crate::registry::{Registry, UnknownStrategy};

pub use config::{ChatBackendConfig, EmbedBackendConfig, EnvOverrides};
pub use embed::{HashEmbedder, HttpEmbedder};
pub use http::{HttpChat, RetryPolicy};
pub use mock::{EchoChat, MockChat, MockRule};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock backend has no scripted response for prompt hash {hash}")]
    MockMiss { hash: String },
    #[error("request timed out after {attempts} attempt(s): {message}")]
    Timeout { attempts: u32, message: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Unknown(#[from] UnknownStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ScreenshotRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Single user turn with the given images attached in order.
    pub fn user(text: impl Into<String>, images: Vec<ScreenshotRef>) -> Self {
        ChatRequest {
            messages: vec![ChatMessage { role: Role::User, text: text.into(), images }],
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let last = self.messages.last().ok_or_else(|| GatewayError::InvalidRequest("no messages".into()))?;
        if last.role != Role::User {
            return Err(GatewayError::InvalidRequest("last message must have role user".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {} < 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message texts joined with newlines.
    pub fn full_text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(|m| m.images.len()).sum()
    }

    /// SHA-256 over the message contents (roles, texts, image paths), hex
    /// encoded. Sampling parameters are not part of the hash.
    pub fn prompt_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.messages).expect("messages serialize");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

/// Sends `req` after overriding its sampling parameters with the backend
/// config's values.
pub fn chat(backend: &dyn ChatBackend, cfg: &ChatBackendConfig, mut req: ChatRequest) -> Result<String, GatewayError> {
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req.validate()?;
    backend.chat(&req)
}

/// A backend bundled with the config whose sampling parameters it is called
/// with. One per model role.
pub struct ChatAgent {
    backend: Box<dyn ChatBackend>,
    config: ChatBackendConfig,
}

impl ChatAgent {
    pub fn new(backend: Box<dyn ChatBackend>, config: ChatBackendConfig) -> Self {
        ChatAgent { backend, config }
    }

    pub fn from_config(config: &ChatBackendConfig) -> Result<Self, GatewayError> {
        Ok(ChatAgent { backend: build_chat(config)?, config: config.clone() })
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// One user turn carrying `images` in order.
    pub fn ask(&self, text: &str, images: &[ScreenshotRef]) -> Result<String, GatewayError> {
        chat(self.backend.as_ref(), &self.config, ChatRequest::user(text, images.to_vec()))
    }
}

impl std::fmt::Debug for ChatAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatAgent").field("backend", &self.backend.name()).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub trait EmbedBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

pub type ChatRegistry = Registry<dyn ChatBackend, ChatBackendConfig, GatewayError>;
pub type EmbedRegistry = Registry<dyn EmbedBackend, EmbedBackendConfig, GatewayError>;

/// Built-in chat backends: `mock`, `echo`, `http`.
pub fn chat_backends() -> &'static ChatRegistry {
    static REG: OnceLock<ChatRegistry> = OnceLock::new();
    REG.get_or_init(|| {
        ChatRegistry::new("chat backend")
            .register("mock", |c| Ok(Box::new(MockChat::from_config(c)?) as Box<dyn ChatBackend>))
            .register("echo", |_| Ok(Box::new(EchoChat) as Box<dyn ChatBackend>))
            .register("http", |c| Ok(Box::new(HttpChat::from_config(c)?) as Box<dyn ChatBackend>))
    })
}

/// Built-in embedders: `hash` (offline, deterministic) and `http`.
pub fn embed_backends() -> &'static EmbedRegistry {
    static REG: OnceLock<EmbedRegistry> = OnceLock::new();
    REG.get_or_init(|| {
        EmbedRegistry::new("embedding backend")
            .register("hash", |c| Ok(Box::new(HashEmbedder::new(c.dim, c.seed)?) as Box<dyn EmbedBackend>))
            .register("http", |c| Ok(Box::new(HttpEmbedder::from_config(c)?) as Box<dyn EmbedBackend>))
    })
}

pub fn build_chat(cfg: &ChatBackendConfig) -> Result<Box<dyn ChatBackend>, GatewayError> {
    chat_backends().build(&cfg.kind, cfg)
}

pub fn build_embed(cfg: &EmbedBackendConfig) -> Result<Box<dyn EmbedBackend>, GatewayError> {
    embed_backends().build(&cfg.kind, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_must_end_with_user_turn() {
        let mut req = ChatRequest::user("hi", vec![]);
        assert!(req.validate().is_ok());
        req.messages.push(ChatMessage { role: Role::System, text: "x".into(), images: vec![] });
        assert!(req.validate().is_err());
        req.messages.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn prompt_hash_ignores_sampling_parameters() {
        let a = ChatRequest::user("hi", vec![]);
        let mut b = a.clone();
        b.temperature = 0.7;
        assert_eq!(a.prompt_hash(), b.prompt_hash());
        assert_ne!(a.prompt_hash(), ChatRequest::user("hi!", vec![]).prompt_hash());
        assert_eq!(a.prompt_hash().len(), 64);
    }

    #[test]
    fn registries_list_builtins() {
        assert_eq!(chat_backends().names(), vec!["mock", "echo", "http"]);
        assert_eq!(embed_backends().names(), vec!["hash", "http"]);
        let cfg = ChatBackendConfig { kind: "carrier-pigeon".into(), ..Default::default() };
        assert!(matches!(build_chat(&cfg), Err(GatewayError::Unknown(_))));
    }
}
