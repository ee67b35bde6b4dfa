//! TOML run configuration.
//!
//! ```toml
//! [store]
//! threshold = 0.5
//!
//! [embedding]
//! kind = "hash"
//! dim = 64
//!
//! [backends.default]
//! kind = "mock"
//! script = "mocks.json"
//!
//! [backends.agent]      # overrides only the listed keys of `default`
//! kind = "http"
//! model = "ui-tars-7b"
//!
//! [deployment]
//! k_shots = 1
//! adapter = "uitars"
//!
//! [policy]
//! intent_match = "exact"
//! ```
//!
//! Roles are `explicit`, `implicit` (demonstration analysis), `extractor`,
//! `rewriter` and `agent` (query time). Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ifragent::deployment::{DeploymentPrompts, DEFAULT_ADAPTER, DEFAULT_K_SHOTS};
use ifragent::extraction::ExtractionPrompts;
use ifragent::gateway::{ChatAgent, ChatBackendConfig, EmbedBackendConfig, EnvOverrides};
use ifragent::prompt::Template;
use ifragent::store::DEFAULT_THRESHOLD;
use ifragent::MatchPolicy;

pub const ROLES: [&str; 5] = ["explicit", "implicit", "extractor", "rewriter", "agent"];

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub threshold: f64,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection { threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub explicit_prompt: Option<PathBuf>,
    pub implicit_prompt: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentSection {
    pub k_shots: usize,
    pub adapter: String,
    pub extractor_prompt: Option<PathBuf>,
    pub rewriter_prompt: Option<PathBuf>,
    pub agent_prompt: Option<PathBuf>,
}

impl Default for DeploymentSection {
    fn default() -> Self {
        DeploymentSection {
            k_shots: DEFAULT_K_SHOTS,
            adapter: DEFAULT_ADAPTER.into(),
            extractor_prompt: None,
            rewriter_prompt: None,
            agent_prompt: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    store: StoreSection,
    embedding: EmbedBackendConfig,
    backends: BTreeMap<String, toml::Table>,
    extraction: ExtractionSection,
    deployment: DeploymentSection,
    policy: MatchPolicy,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub store: StoreSection,
    pub embedding: EmbedBackendConfig,
    pub backends: BTreeMap<&'static str, ChatBackendConfig>,
    pub extraction: ExtractionSection,
    pub deployment: DeploymentSection,
    pub policy: MatchPolicy,
}

impl Default for Config {
    fn default() -> Self {
        Config::from_raw(RawConfig::default(), Path::new(".")).expect("default config is valid")
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        Self::from_raw(raw, base)
    }

    fn from_raw(mut raw: RawConfig, base: &Path) -> Result<Self> {
        for name in raw.backends.keys() {
            if name != "default" && !ROLES.contains(&name.as_str()) {
                bail!("unknown backend role `{name}` (expected default or one of {})", ROLES.join(", "));
            }
        }
        let default = raw.backends.remove("default").unwrap_or_default();
        let mut backends = BTreeMap::new();
        for role in ROLES {
            let mut table = default.clone();
            if let Some(over) = raw.backends.get(role) {
                table.extend(over.clone());
            }
            let mut cfg: ChatBackendConfig = table.try_into().with_context(|| format!("[backends.{role}]"))?;
            cfg.script = cfg.script.map(|p| resolve(base, &p));
            backends.insert(role, cfg);
        }
        let mut extraction = raw.extraction;
        for p in [&mut extraction.explicit_prompt, &mut extraction.implicit_prompt] {
            *p = p.as_ref().map(|p| resolve(base, p));
        }
        let mut deployment = raw.deployment;
        for p in [&mut deployment.extractor_prompt, &mut deployment.rewriter_prompt, &mut deployment.agent_prompt] {
            *p = p.as_ref().map(|p| resolve(base, p));
        }
        raw.policy.validate()?;
        Ok(Config { store: raw.store, embedding: raw.embedding, backends, extraction, deployment, policy: raw.policy })
    }

    /// Applies `IFR_*` environment overrides to every HTTP backend.
    pub fn apply_env(&mut self, env: &EnvOverrides) {
        for cfg in self.backends.values_mut() {
            env.apply_chat(cfg);
        }
        env.apply_embed(&mut self.embedding);
    }

    pub fn set_verbose(&mut self, verbose: bool) {
        for cfg in self.backends.values_mut() {
            cfg.verbose |= verbose;
        }
        self.embedding.verbose |= verbose;
    }

    pub fn agent(&self, role: &str) -> Result<ChatAgent> {
        let cfg = self.backends.get(role).with_context(|| format!("no backend role `{role}`"))?;
        ChatAgent::from_config(cfg).with_context(|| format!("building the `{role}` backend"))
    }

    pub fn extraction_prompts(&self) -> Result<ExtractionPrompts> {
        let mut p = ExtractionPrompts::default();
        if let Some(path) = &self.extraction.explicit_prompt {
            p.explicit = Template::from_file(path, ExtractionPrompts::EXPLICIT_VARS)?;
        }
        if let Some(path) = &self.extraction.implicit_prompt {
            p.implicit = Template::from_file(path, ExtractionPrompts::IMPLICIT_VARS)?;
        }
        Ok(p)
    }

    pub fn deployment_prompts(&self) -> Result<DeploymentPrompts> {
        let mut p = DeploymentPrompts::default();
        if let Some(path) = &self.deployment.extractor_prompt {
            p.extractor = Template::from_file(path, DeploymentPrompts::EXTRACTOR_VARS)?;
        }
        if let Some(path) = &self.deployment.rewriter_prompt {
            p.rewriter = Template::from_file(path, DeploymentPrompts::REWRITER_VARS)?;
        }
        if let Some(path) = &self.deployment.agent_prompt {
            p.agent = Some(Template::from_file(path, DeploymentPrompts::AGENT_VARS)?);
        }
        Ok(p)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ifragent::eval::IntentMatch;

    #[test]
    fn defaults() {
        let c = Config::parse("", Path::new("/cfg")).unwrap();
        assert_eq!(c.store.threshold, 0.5);
        assert_eq!(c.deployment.k_shots, 1);
        assert_eq!(c.deployment.adapter, "canonical");
        assert_eq!(c.embedding.kind, "hash");
        assert_eq!(c.embedding.dim, 64);
        assert_eq!(c.backends.len(), 5);
        assert!(c.backends.values().all(|b| b.kind == "http"));
    }

    #[test]
    fn role_tables_override_default_keys() {
        let text = r#"
            [backends.default]
            kind = "mock"
            script = "mocks/all.json"
            temperature = 0.2

            [backends.agent]
            kind = "http"
            endpoint = "http://localhost:8000/v1"
            model = "ui-tars"

            [policy]
            intent_match = "exact"
        "#;
        let c = Config::parse(text, Path::new("/cfg")).unwrap();
        let agent = &c.backends["agent"];
        assert_eq!(agent.kind, "http");
        assert_eq!(agent.temperature, 0.2);
        assert_eq!(agent.model.as_deref(), Some("ui-tars"));
        let rewriter = &c.backends["rewriter"];
        assert_eq!(rewriter.kind, "mock");
        assert_eq!(rewriter.script.as_deref(), Some(Path::new("/cfg/mocks/all.json")));
        assert_eq!(c.policy.intent_match, IntentMatch::Exact);
    }

    #[test]
    fn rejects_unknown_roles_and_keys() {
        assert!(Config::parse("[backends.planner]\nkind = \"mock\"", Path::new(".")).is_err());
        assert!(Config::parse("[backends.default]\nflavour = \"x\"", Path::new(".")).is_err());
        assert!(Config::parse("[store]\ntau = 0.3", Path::new(".")).is_err());
        assert!(Config::parse("[policy]\nclick_rel_err = 2.0", Path::new(".")).is_err());
    }

    #[test]
    fn env_overrides_reach_http_backends_only() {
        let mut c = Config::parse("[backends.agent]\nkind = \"mock\"\nrules = []", Path::new(".")).unwrap();
        let env = EnvOverrides::from_lookup(|k| (k == "IFR_ENDPOINT").then(|| "http://example.test/v1".to_string()));
        c.apply_env(&env);
        assert_eq!(c.backends["agent"].endpoint, None);
        assert_eq!(c.backends["rewriter"].endpoint.as_deref(), Some("http://example.test/v1"));
    }
}
