//! Output grammars of the supported mobile-use agents.
//!
//! Each grammar parses an agent's raw reply into a canonical [`Action`] and
//! renders an action back into the agent's native syntax. Coordinates are
//! converted between the grammar's basis and screen fractions.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use crate::model::{Action, Direction, Point, ScreenshotRef};
use crate::prompt;
use crate::registry::{Registry, UnknownStrategy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActionParseError {
    #[error("no recognizable action in agent output {raw:?}")]
    Unrecognized { raw: String },
    #[error("malformed {action} arguments: {detail}")]
    Malformed { action: String, detail: String },
    #[error("coordinate ({x}, {y}) outside the {width}x{height} basis")]
    OutOfRange { x: f64, y: f64, width: f64, height: f64 },
}

/// How an agent expresses screen positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateBasis {
    /// Pixels of the screenshot.
    Pixels,
    /// Integers on a 0..=1000 scale per axis.
    Thousandths,
}

impl CoordinateBasis {
    pub fn extent(self, screen: &ScreenshotRef) -> (f64, f64) {
        match self {
            CoordinateBasis::Pixels => (screen.width as f64, screen.height as f64),
            CoordinateBasis::Thousandths => (1000.0, 1000.0),
        }
    }

    pub fn to_point(self, x: f64, y: f64, screen: &ScreenshotRef) -> Result<Point, ActionParseError> {
        let (w, h) = self.extent(screen);
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            return Err(ActionParseError::OutOfRange { x, y, width: w, height: h });
        }
        Point::new(x / w, y / h).map_err(|_| ActionParseError::OutOfRange { x, y, width: w, height: h })
    }

    /// Nearest integer coordinates in this basis.
    pub fn from_point(self, p: Point, screen: &ScreenshotRef) -> (i64, i64) {
        let (w, h) = self.extent(screen);
        ((p.x * w).round() as i64, (p.y * h).round() as i64)
    }
}

pub trait ActionGrammar: Send + Sync {
    fn name(&self) -> &str;
    fn basis(&self) -> CoordinateBasis;
    /// Bundled agent prompt; placeholders `{query}`, `{sop}`, optionally
    /// `{width}` and `{height}`.
    fn default_prompt(&self) -> &'static str;
    fn parse(&self, raw: &str, screen: &ScreenshotRef) -> Result<Action, ActionParseError>;
    fn render(&self, action: &Action, screen: &ScreenshotRef) -> String;
}

pub type GrammarRegistry = Registry<dyn ActionGrammar, (), UnknownStrategy>;

/// Built-in grammars: `canonical`, `uitars`, `osatlas`, `qwenvl`.
pub fn grammars() -> &'static GrammarRegistry {
    static REG: OnceLock<GrammarRegistry> = OnceLock::new();
    REG.get_or_init(|| {
        GrammarRegistry::new("agent adapter")
            .register("canonical", |_| Ok(Box::new(Canonical) as Box<dyn ActionGrammar>))
            .register("uitars", |_| Ok(Box::new(UiTars) as Box<dyn ActionGrammar>))
            .register("osatlas", |_| Ok(Box::new(OsAtlas) as Box<dyn ActionGrammar>))
            .register("qwenvl", |_| Ok(Box::new(QwenVl) as Box<dyn ActionGrammar>))
    })
}

pub fn build_grammar(name: &str) -> Result<Box<dyn ActionGrammar>, UnknownStrategy> {
    grammars().build(name, &())
}

fn unrecognized(raw: &str) -> ActionParseError {
    ActionParseError::Unrecognized { raw: raw.to_string() }
}

fn malformed(action: &str, detail: impl Into<String>) -> ActionParseError {
    ActionParseError::Malformed { action: action.to_string(), detail: detail.into() }
}

fn pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\(?\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)?\s*$").unwrap())
}

fn number_pair(action: &str, args: &str) -> Result<(f64, f64), ActionParseError> {
    let c = pair_re().captures(args).ok_or_else(|| malformed(action, format!("expected `x, y`, got {args:?}")))?;
    Ok((c[1].parse().unwrap(), c[2].parse().unwrap()))
}

fn no_args(action: &str, args: &str) -> Result<(), ActionParseError> {
    if args.trim().is_empty() {
        Ok(())
    } else {
        Err(malformed(action, format!("takes no arguments, got {args:?}")))
    }
}

fn direction(action: &str, s: &str) -> Result<Direction, ActionParseError> {
    s.parse().map_err(|e: String| malformed(action, e))
}

/// `CLICK(x, y)` in pixels, `TYPE("json string")`, `SCROLL(UP)`,
/// `PRESS_BACK()` and friends. The last line holding a call wins.
#[derive(Debug, Clone, Copy)]
pub struct Canonical;

fn call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:Action:\s*)?([A-Za-z_]+)\s*\((.*)\)\s*$").unwrap())
}

impl ActionGrammar for Canonical {
    fn name(&self) -> &str {
        "canonical"
    }

    fn basis(&self) -> CoordinateBasis {
        CoordinateBasis::Pixels
    }

    fn default_prompt(&self) -> &'static str {
        include_str!("../../prompts/agent_canonical.txt")
    }

    fn parse(&self, raw: &str, screen: &ScreenshotRef) -> Result<Action, ActionParseError> {
        let c = raw.lines().rev().find_map(|l| call_re().captures(l)).ok_or_else(|| unrecognized(raw))?;
        let name = c[1].to_ascii_uppercase();
        let args = &c[2];
        let point = |args: &str| {
            let (x, y) = number_pair(&name, args)?;
            self.basis().to_point(x, y, screen)
        };
        match name.as_str() {
            "CLICK" => Ok(Action::Click(point(args)?)),
            "LONG_PRESS" => Ok(Action::LongPress(point(args)?)),
            "TYPE" => serde_json::from_str::<String>(args.trim())
                .map(Action::Type)
                .map_err(|_| malformed(&name, format!("expected a double-quoted string, got {args:?}"))),
            "SCROLL" => Ok(Action::Scroll(direction(&name, args)?)),
            "PRESS_BACK" => no_args(&name, args).map(|_| Action::PressBack),
            "PRESS_HOME" => no_args(&name, args).map(|_| Action::PressHome),
            "WAIT" => no_args(&name, args).map(|_| Action::Wait),
            "COMPLETE" | "COMPELTE" => no_args(&name, args).map(|_| Action::Complete),
            _ => Err(unrecognized(raw)),
        }
    }

    fn render(&self, action: &Action, screen: &ScreenshotRef) -> String {
        match action {
            Action::Click(p) | Action::LongPress(p) => {
                let (x, y) = self.basis().from_point(*p, screen);
                format!("{}({x}, {y})", action.kind())
            }
            Action::Type(t) => format!("TYPE({})", serde_json::to_string(t).unwrap()),
            Action::Scroll(d) => format!("SCROLL({})", d.as_str()),
            other => format!("{}()", other.kind()),
        }
    }
}

/// UI-TARS style: `Thought: ... Action: click(start_box='(x,y)')` on a
/// 0-1000 scale.
#[derive(Debug, Clone, Copy)]
pub struct UiTars;

fn uitars_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)^\s*([a-z_]+)\((.*)\)\s*$").unwrap())
}

fn uitars_arg<'a>(args: &'a str, key: &str) -> Option<&'a str> {
    let start = args.find(&format!("{key}='"))? + key.len() + 2;
    let rest = &args[start..];
    let mut escaped = false;
    for (i, ch) in rest.char_indices() {
        match ch {
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            '\'' => return Some(&rest[..i]),
            _ => {}
        }
    }
    None
}

fn uitars_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\'', "\\'").replace('\n', "\\n")
}

fn uitars_unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

impl ActionGrammar for UiTars {
    fn name(&self) -> &str {
        "uitars"
    }

    fn basis(&self) -> CoordinateBasis {
        CoordinateBasis::Thousandths
    }

    fn default_prompt(&self) -> &'static str {
        include_str!("../../prompts/agent_uitars.txt")
    }

    fn parse(&self, raw: &str, screen: &ScreenshotRef) -> Result<Action, ActionParseError> {
        let tail = raw.rfind("Action:").map_or(raw, |i| &raw[i + "Action:".len()..]);
        let c = uitars_re().captures(tail).ok_or_else(|| unrecognized(raw))?;
        let name = &c[1];
        let args = &c[2];
        let point = || {
            let b = uitars_arg(args, "start_box").ok_or_else(|| malformed(name, "missing start_box"))?;
            let (x, y) = number_pair(name, b)?;
            self.basis().to_point(x, y, screen)
        };
        match name {
            "click" => Ok(Action::Click(point()?)),
            "long_press" => Ok(Action::LongPress(point()?)),
            "type" => uitars_arg(args, "content")
                .map(|t| Action::Type(uitars_unescape(t)))
                .ok_or_else(|| malformed(name, "missing content")),
            "scroll" => {
                let d = uitars_arg(args, "direction").ok_or_else(|| malformed(name, "missing direction"))?;
                Ok(Action::Scroll(direction(name, d)?))
            }
            "press_back" => no_args(name, args).map(|_| Action::PressBack),
            "press_home" => no_args(name, args).map(|_| Action::PressHome),
            "wait" => no_args(name, args).map(|_| Action::Wait),
            "finished" => Ok(Action::Complete),
            _ => Err(unrecognized(raw)),
        }
    }

    fn render(&self, action: &Action, screen: &ScreenshotRef) -> String {
        let body = match action {
            Action::Click(p) | Action::LongPress(p) => {
                let (x, y) = self.basis().from_point(*p, screen);
                let name = if matches!(action, Action::Click(_)) { "click" } else { "long_press" };
                format!("{name}(start_box='({x},{y})')")
            }
            Action::Type(t) => format!("type(content='{}')", uitars_escape(t)),
            Action::Scroll(d) => {
                format!("scroll(start_box='(500,500)', direction='{}')", d.as_str().to_ascii_lowercase())
            }
            Action::PressBack => "press_back()".into(),
            Action::PressHome => "press_home()".into(),
            Action::Wait => "wait()".into(),
            Action::Complete => "finished()".into(),
        };
        format!("Action: {body}")
    }
}

/// OS-Atlas style: `actions:` followed by `CLICK <point>[[x,y]]</point>`,
/// `TYPE [text]` or `SCROLL [UP]`, on a 0-1000 scale.
#[derive(Debug, Clone, Copy)]
pub struct OsAtlas;

fn atlas_point_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^<point>\[\[(.*?)\]\]</point>").unwrap())
}

impl ActionGrammar for OsAtlas {
    fn name(&self) -> &str {
        "osatlas"
    }

    fn basis(&self) -> CoordinateBasis {
        CoordinateBasis::Thousandths
    }

    fn default_prompt(&self) -> &'static str {
        include_str!("../../prompts/agent_osatlas.txt")
    }

    fn parse(&self, raw: &str, screen: &ScreenshotRef) -> Result<Action, ActionParseError> {
        let lower = raw.to_ascii_lowercase();
        let body = match lower.rfind("actions:") {
            Some(i) => raw[i + "actions:".len()..].trim(),
            None => raw.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim(),
        };
        let name_end = body.find(|c: char| !(c.is_ascii_alphabetic() || c == '_')).unwrap_or(body.len());
        let name = body[..name_end].to_ascii_uppercase();
        let rest = body[name_end..].trim_start();
        let point = || {
            let c =
                atlas_point_re().captures(rest).ok_or_else(|| malformed(&name, "expected <point>[[x,y]]</point>"))?;
            let (x, y) = number_pair(&name, &c[1])?;
            self.basis().to_point(x, y, screen)
        };
        let bracketed = || match (rest.find('['), rest.rfind(']')) {
            (Some(0), Some(end)) => Ok(&rest[1..end]),
            _ => Err(malformed(&name, "expected [argument]")),
        };
        let bare = |a: Action| {
            if rest.lines().next().unwrap_or("").trim().is_empty() {
                Ok(a)
            } else {
                Err(malformed(&name, format!("takes no arguments, got {rest:?}")))
            }
        };
        match name.as_str() {
            "CLICK" => Ok(Action::Click(point()?)),
            "LONG_PRESS" => Ok(Action::LongPress(point()?)),
            "TYPE" => Ok(Action::Type(bracketed()?.to_string())),
            "SCROLL" => Ok(Action::Scroll(direction(&name, bracketed()?)?)),
            "PRESS_BACK" => bare(Action::PressBack),
            "PRESS_HOME" => bare(Action::PressHome),
            "WAIT" => bare(Action::Wait),
            "COMPLETE" => bare(Action::Complete),
            _ => Err(unrecognized(raw)),
        }
    }

    fn render(&self, action: &Action, screen: &ScreenshotRef) -> String {
        let body = match action {
            Action::Click(p) | Action::LongPress(p) => {
                let (x, y) = self.basis().from_point(*p, screen);
                format!("{} <point>[[{x},{y}]]</point>", action.kind())
            }
            Action::Type(t) => format!("TYPE [{t}]"),
            Action::Scroll(d) => format!("SCROLL [{}]", d.as_str()),
            other => other.kind().to_string(),
        };
        format!("actions:\n{body}")
    }
}

/// Qwen2.5-VL `mobile_use` tool calls inside `<tool_call>` tags, pixel
/// coordinates.
#[derive(Debug, Clone, Copy)]
pub struct QwenVl;

fn tool_call_body(raw: &str) -> &str {
    let Some(open) = raw.rfind("<tool_call>") else { return raw.trim() };
    let body = &raw[open + "<tool_call>".len()..];
    body.find("</tool_call>").map_or(body, |end| &body[..end]).trim()
}

fn coordinate(name: &str, args: &Value, key: &str) -> Result<(f64, f64), ActionParseError> {
    let pair = args.get(key).and_then(Value::as_array).ok_or_else(|| malformed(name, format!("missing {key}")))?;
    match pair.as_slice() {
        [x, y] => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(malformed(name, format!("{key} must hold two numbers"))),
        },
        _ => Err(malformed(name, format!("{key} must hold two numbers"))),
    }
}

impl ActionGrammar for QwenVl {
    fn name(&self) -> &str {
        "qwenvl"
    }

    fn basis(&self) -> CoordinateBasis {
        CoordinateBasis::Pixels
    }

    fn default_prompt(&self) -> &'static str {
        include_str!("../../prompts/agent_qwenvl.txt")
    }

    fn parse(&self, raw: &str, screen: &ScreenshotRef) -> Result<Action, ActionParseError> {
        let call: Value = serde_json::from_str(tool_call_body(raw)).map_err(|_| unrecognized(raw))?;
        let args = call.get("arguments").ok_or_else(|| unrecognized(raw))?;
        let name = args.get("action").and_then(Value::as_str).ok_or_else(|| unrecognized(raw))?;
        let point = |key: &str| {
            let (x, y) = coordinate(name, args, key)?;
            self.basis().to_point(x, y, screen)
        };
        match name {
            "click" => Ok(Action::Click(point("coordinate")?)),
            "long_press" => Ok(Action::LongPress(point("coordinate")?)),
            "type" => args
                .get("text")
                .and_then(Value::as_str)
                .map(|t| Action::Type(t.to_string()))
                .ok_or_else(|| malformed(name, "missing text")),
            "swipe" => {
                if let Some(d) = args.get("direction").and_then(Value::as_str) {
                    return Ok(Action::Scroll(direction(name, d)?));
                }
                let (x0, y0) = coordinate(name, args, "coordinate")?;
                let (x1, y1) = coordinate(name, args, "coordinate2")?;
                let (dx, dy) = (x1 - x0, y1 - y0);
                if dx == 0.0 && dy == 0.0 {
                    return Err(malformed(name, "swipe has zero length"));
                }
                Ok(Action::Scroll(if dx.abs() > dy.abs() {
                    if dx > 0.0 {
                        Direction::Right
                    } else {
                        Direction::Left
                    }
                } else if dy > 0.0 {
                    Direction::Down
                } else {
                    Direction::Up
                }))
            }
            "system_button" => match args.get("button").and_then(Value::as_str) {
                Some(b) if b.eq_ignore_ascii_case("back") => Ok(Action::PressBack),
                Some(b) if b.eq_ignore_ascii_case("home") => Ok(Action::PressHome),
                other => Err(malformed(name, format!("unsupported button {other:?}"))),
            },
            "wait" => Ok(Action::Wait),
            "terminate" => Ok(Action::Complete),
            _ => Err(unrecognized(raw)),
        }
    }

    fn render(&self, action: &Action, screen: &ScreenshotRef) -> String {
        let args = match action {
            Action::Click(p) | Action::LongPress(p) => {
                let (x, y) = self.basis().from_point(*p, screen);
                let name = if matches!(action, Action::Click(_)) { "click" } else { "long_press" };
                json!({"action": name, "coordinate": [x, y]})
            }
            Action::Type(t) => json!({"action": "type", "text": t}),
            Action::Scroll(d) => json!({"action": "swipe", "direction": d.as_str().to_ascii_lowercase()}),
            Action::PressBack => json!({"action": "system_button", "button": "Back"}),
            Action::PressHome => json!({"action": "system_button", "button": "Home"}),
            Action::Wait => json!({"action": "wait"}),
            Action::Complete => json!({"action": "terminate", "status": "success"}),
        };
        format!("<tool_call>\n{}\n</tool_call>", json!({"name": "mobile_use", "arguments": args}))
    }
}

/// Agent prompt variables for one screen.
pub(crate) fn agent_vars(query: &str, sop: &[String], screen: &ScreenshotRef) -> [(&'static str, String); 4] {
    [
        ("query", query.to_string()),
        ("sop", prompt::render_steps(sop)),
        ("width", screen.width.to_string()),
        ("height", screen.height.to_string()),
    ]
}
