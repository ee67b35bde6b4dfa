use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::mock::MockRule;

/// Settings for one chat backend, as found in a `[backends.*]` config table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatBackendConfig {
    /// Registry name: `mock`, `echo` or `http`.
    pub kind: String,
    /// Base URL of an OpenAI-compatible API, or the full
    /// `.../chat/completions` URL.
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    /// Mock script file (JSON `{"rules": [...]}`), resolved against the
    /// config file's directory.
    pub script: Option<PathBuf>,
    pub rules: Vec<MockRule>,
    pub verbose: bool,
}

impl Default for ChatBackendConfig {
    fn default() -> Self {
        ChatBackendConfig {
            kind: "http".into(),
            endpoint: None,
            api_key: None,
            model: None,
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
            script: None,
            rules: Vec::new(),
            verbose: false,
        }
    }
}

impl ChatBackendConfig {
    pub fn mock(rules: Vec<MockRule>) -> Self {
        ChatBackendConfig { kind: "mock".into(), rules, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedBackendConfig {
    /// Registry name: `hash` or `http`.
    pub kind: String,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub verbose: bool,
}

impl Default for EmbedBackendConfig {
    fn default() -> Self {
        EmbedBackendConfig {
            kind: "hash".into(),
            dim: 64,
            seed: 0,
            endpoint: None,
            api_key: None,
            model: None,
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
            verbose: false,
        }
    }
}

/// Credential and endpoint overrides read from the environment.
///
/// `IFR_ENDPOINT`, `IFR_API_KEY`, `IFR_MODEL`, `IFR_EMBED_MODEL`,
/// `IFR_TIMEOUT_SECS`, `IFR_RETRIES`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvOverrides {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub embed_model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
}

impl EnvOverrides {
    pub fn from_env() -> Self {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Self {
        let nonempty = |k: &str| get(k).filter(|v| !v.trim().is_empty());
        EnvOverrides {
            endpoint: nonempty("IFR_ENDPOINT"),
            api_key: nonempty("IFR_API_KEY"),
            model: nonempty("IFR_MODEL"),
            embed_model: nonempty("IFR_EMBED_MODEL"),
            timeout_secs: nonempty("IFR_TIMEOUT_SECS").and_then(|v| v.trim().parse().ok()),
            retries: nonempty("IFR_RETRIES").and_then(|v| v.trim().parse().ok()),
        }
    }

    /// Only HTTP backends are touched; mocks stay offline.
    pub fn apply_chat(&self, cfg: &mut ChatBackendConfig) {
        if cfg.kind != "http" {
            return;
        }
        if let Some(v) = &self.endpoint {
            cfg.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.api_key {
            cfg.api_key = Some(v.clone());
        }
        if let Some(v) = &self.model {
            cfg.model = Some(v.clone());
        }
        if let Some(v) = self.timeout_secs {
            cfg.timeout_secs = v;
        }
        if let Some(v) = self.retries {
            cfg.retries = v;
        }
    }

    pub fn apply_embed(&self, cfg: &mut EmbedBackendConfig) {
        if cfg.kind != "http" {
            return;
        }
        if let Some(v) = &self.endpoint {
            cfg.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.api_key {
            cfg.api_key = Some(v.clone());
        }
        if let Some(v) = &self.embed_model {
            cfg.model = Some(v.clone());
        }
        if let Some(v) = self.timeout_secs {
            cfg.timeout_secs = v;
        }
        if let Some(v) = self.retries {
            cfg.retries = v;
        }
    }
}
