//! Prompt templates with `{name}` placeholders, and parsers for the line
//! grammars the models are asked to answer in.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::gateway::GatewayError;
use crate::model::ScreenshotRef;

pub const EXPLICIT: &str = include_str!("../prompts/explicit.txt");
pub const IMPLICIT: &str = include_str!("../prompts/implicit.txt");
pub const EXTRACTOR: &str = include_str!("../prompts/extractor.txt");
pub const REWRITER: &str = include_str!("../prompts/rewriter.txt");

/// Header line that opens every few-shot demonstration block.
pub const DEMO_MARKER: &str = "### Demonstration";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{name}` is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("cannot read template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Failure of one model call: the backend failed, or its reply did not follow
/// the expected grammar (the raw reply is kept).
#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("reply has no {expected}: {raw:?}")]
    Unparseable { expected: &'static str, raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

impl Template {
    /// Fails if any of `required` does not occur as a placeholder.
    pub fn new(name: impl Into<String>, text: impl Into<String>, required: &[&str]) -> Result<Self, TemplateError> {
        let t = Template { name: name.into(), text: text.into() };
        let have = t.placeholders();
        if let Some(missing) = required.iter().find(|p| !have.contains(**p)) {
            return Err(TemplateError::MissingPlaceholder { name: t.name, placeholder: missing.to_string() });
        }
        Ok(t)
    }

    pub fn from_file(path: &Path, required: &[&str]) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
        Self::new(path.display().to_string(), text, required)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholder_re().captures_iter(&self.text).map(|c| c[1].to_string()).collect()
    }

    /// Single-pass substitution; substituted values are never re-scanned and
    /// unknown placeholders are left untouched.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        placeholder_re()
            .replace_all(&self.text, |c: &regex::Captures<'_>| {
                vars.iter().find(|(k, _)| *k == &c[1]).map(|(_, v)| v.to_string()).unwrap_or_else(|| c[0].to_string())
            })
            .into_owned()
    }
}

pub fn render_steps(steps: &[String]) -> String {
    steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

pub fn render_screenshots(shots: &[ScreenshotRef]) -> String {
    shots
        .iter()
        .enumerate()
        .map(|(i, s)| format!("<image {}> {} ({}x{})", i + 1, s.path, s.width, s.height))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One `### Demonstration n` block per shot; empty for zero-shot.
pub fn render_demonstrations(shots: &[(String, Vec<String>)]) -> String {
    shots
        .iter()
        .enumerate()
        .map(|(i, (q, p))| format!("\n{DEMO_MARKER} {}\nTask: {q}\nSOP:\n{}\n", i + 1, render_steps(p)))
        .collect()
}

pub fn count_demonstrations(prompt: &str) -> usize {
    prompt.lines().filter(|l| l.starts_with(DEMO_MARKER)).count()
}

fn numbered_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)、]\s*(.*?)\s*$").unwrap())
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+\s*[.)、])\s*(.*?)\s*$").unwrap())
}

fn numbered(line: &str) -> Option<String> {
    numbered_re().captures(line).map(|c| c[1].to_string()).filter(|s| !s.is_empty())
}

/// Every `n. step` line, numbering stripped and whitespace trimmed. `None`
/// when there are none.
pub fn parse_numbered_steps(text: &str) -> Option<Vec<String>> {
    let steps: Vec<String> = text.lines().filter_map(numbered).collect();
    (!steps.is_empty()).then_some(steps)
}

/// Habit statements from `- x`, `* x`, `• x` or `n. x` lines.
pub fn parse_habit_lines(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| bullet_re().captures(l).map(|c| c[1].to_string()))
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("none"))
        .collect()
}

/// Rewriter reply: the first `QUERY:` line, then an optional `SOP:` header
/// and the contiguous numbered block that follows it.
pub fn parse_rewrite(text: &str) -> Option<(String, Vec<String>)> {
    let mut lines = text.lines().skip_while(|l| !l.trim_start().starts_with("QUERY:"));
    let query = lines.next()?.trim_start().trim_start_matches("QUERY:").trim().to_string();
    if query.is_empty() {
        return None;
    }
    let mut sop = Vec::new();
    for line in lines {
        let t = line.trim();
        if let Some(step) = numbered(line) {
            sop.push(step);
        } else if t.is_empty() || (sop.is_empty() && t.eq_ignore_ascii_case("SOP:")) {
            continue;
        } else {
            break;
        }
    }
    (!sop.is_empty()).then_some((query, sop))
}
