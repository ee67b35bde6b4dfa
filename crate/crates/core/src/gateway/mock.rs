use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatBackendConfig, ChatRequest, GatewayError, Role};

/// One scripted reply. Matches on the exact prompt hash, a substring of the
/// request text and/or a substring of an attached image path; every given
/// matcher must hold and the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub response: String,
}

impl MockRule {
    pub fn on_hash(hash: impl Into<String>, response: impl Into<String>) -> Self {
        MockRule { hash: Some(hash.into()), contains: None, image: None, response: response.into() }
    }

    pub fn on_text(needle: impl Into<String>, response: impl Into<String>) -> Self {
        MockRule { hash: None, contains: Some(needle.into()), image: None, response: response.into() }
    }

    /// Additionally requires an attached image whose path contains `needle`.
    pub fn with_image(mut self, needle: impl Into<String>) -> Self {
        self.image = Some(needle.into());
        self
    }

    fn matches(&self, hash: &str, req: &ChatRequest, text: &str) -> bool {
        let hash_ok = self.hash.as_deref().is_none_or(|h| h == hash);
        let text_ok = self.contains.as_deref().is_none_or(|n| text.contains(n));
        let image_ok = self
            .image
            .as_deref()
            .is_none_or(|n| req.messages.iter().flat_map(|m| &m.images).any(|i| i.path.contains(n)));
        hash_ok && text_ok && image_ok
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    rules: Vec<MockRule>,
}

/// Scripted backend: a pure function of the request content.
#[derive(Debug, Clone)]
pub struct MockChat {
    rules: Vec<MockRule>,
}

impl MockChat {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, GatewayError> {
        if let Some(i) = rules.iter().position(|r| r.hash.is_none() && r.contains.is_none() && r.image.is_none()) {
            return Err(GatewayError::Config(format!("mock rule {i} has no `hash`, `contains` or `image` matcher")));
        }
        Ok(MockChat { rules })
    }

    /// Inline rules come first, then the rules of `cfg.script`.
    pub fn from_config(cfg: &ChatBackendConfig) -> Result<Self, GatewayError> {
        let mut rules = cfg.rules.clone();
        if let Some(path) = &cfg.script {
            let raw = std::fs::read_to_string(path)
                .map_err(|source| GatewayError::Io { path: path.display().to_string(), source })?;
            let file: ScriptFile = serde_json::from_str(&raw)
                .map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))?;
            rules.extend(file.rules);
        }
        Self::new(rules)
    }
}

impl ChatBackend for MockChat {
    fn name(&self) -> &str {
        "mock"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let hash = req.prompt_hash();
        let text = req.full_text();
        self.rules
            .iter()
            .find(|r| r.matches(&hash, req, &text))
            .map(|r| r.response.clone())
            .ok_or(GatewayError::MockMiss { hash })
    }
}

/// Replies with the text of the final user turn.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoChat;

impl ChatBackend for EchoChat {
    fn name(&self) -> &str {
        "echo"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.clone())
            .ok_or_else(|| GatewayError::InvalidRequest("no user message".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_hash_hit_and_miss() {
        let req = ChatRequest::user("how do I open the app?", vec![]);
        let mock = MockChat::new(vec![MockRule::on_hash(req.prompt_hash(), "1. Open app")]).unwrap();
        assert_eq!(mock.chat(&req).unwrap(), "1. Open app");

        let other = ChatRequest::user("something else", vec![]);
        match mock.chat(&other) {
            Err(GatewayError::MockMiss { hash }) => assert_eq!(hash, other.prompt_hash()),
            r => panic!("expected mock miss, got {r:?}"),
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let mock = MockChat::new(vec![MockRule::on_text("tea", "A"), MockRule::on_text("order", "B")]).unwrap();
        assert_eq!(mock.chat(&ChatRequest::user("order tea", vec![])).unwrap(), "A");
        assert_eq!(mock.chat(&ChatRequest::user("order coffee", vec![])).unwrap(), "B");
    }

    #[test]
    fn rule_without_matcher_is_rejected() {
        let rule = MockRule { hash: None, contains: None, image: None, response: "x".into() };
        assert!(MockChat::new(vec![rule]).is_err());
    }

    #[test]
    fn image_matcher_tells_screens_apart() {
        let shot = |p: &str| crate::model::ScreenshotRef { path: p.into(), width: 10, height: 10, step_index: 0 };
        let mock = MockChat::new(vec![
            MockRule::on_text("act", "first").with_image("s_0.png"),
            MockRule::on_text("act", "second").with_image("s_1.png"),
        ])
        .unwrap();
        assert_eq!(mock.chat(&ChatRequest::user("act", vec![shot("t/s_0.png")])).unwrap(), "first");
        assert_eq!(mock.chat(&ChatRequest::user("act", vec![shot("t/s_1.png")])).unwrap(), "second");
        assert!(mock.chat(&ChatRequest::user("act", vec![])).is_err());
    }

    #[test]
    fn script_file_rules_follow_inline_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(&path, r#"{"rules":[{"contains":"x","response":"from-file"}]}"#).unwrap();
        let cfg = ChatBackendConfig {
            script: Some(path),
            ..ChatBackendConfig::mock(vec![MockRule::on_text("xy", "inline")])
        };
        let mock = MockChat::from_config(&cfg).unwrap();
        assert_eq!(mock.chat(&ChatRequest::user("xy", vec![])).unwrap(), "inline");
        assert_eq!(mock.chat(&ChatRequest::user("x", vec![])).unwrap(), "from-file");
    }

    #[test]
    fn echo_returns_last_user_text() {
        assert_eq!(EchoChat.chat(&ChatRequest::user("ping", vec![])).unwrap(), "ping");
    }
}
