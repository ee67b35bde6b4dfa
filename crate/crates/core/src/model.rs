//! Domain types shared by every stage: GUI actions, screenshots,
//! annotated trajectories and per-user profiles.
//!
//! Coordinates are always fractions of the screen width/height once an
//! [`Action`] exists in memory. Pixel or model-specific coordinate bases are
//! converted at the edges (dataset loading, agent output parsing).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The eight action kinds of the mobile action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Click,
    Type,
    Scroll,
    PressBack,
    PressHome,
    Wait,
    LongPress,
    Complete,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::Click,
        ActionKind::Type,
        ActionKind::Scroll,
        ActionKind::PressBack,
        ActionKind::PressHome,
        ActionKind::Wait,
        ActionKind::LongPress,
        ActionKind::Complete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "CLICK",
            ActionKind::Type => "TYPE",
            ActionKind::Scroll => "SCROLL",
            ActionKind::PressBack => "PRESS_BACK",
            ActionKind::PressHome => "PRESS_HOME",
            ActionKind::Wait => "WAIT",
            ActionKind::LongPress => "LONG_PRESS",
            ActionKind::Complete => "COMPLETE",
        }
    }

    pub fn takes_point(self) -> bool {
        matches!(self, ActionKind::Click | ActionKind::LongPress)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown action kind `{0}`")]
pub struct UnknownKind(pub String);

impl FromStr for ActionKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CLICK" => Ok(ActionKind::Click),
            "TYPE" => Ok(ActionKind::Type),
            "SCROLL" => Ok(ActionKind::Scroll),
            "PRESS_BACK" => Ok(ActionKind::PressBack),
            "PRESS_HOME" => Ok(ActionKind::PressHome),
            "WAIT" => Ok(ActionKind::Wait),
            "LONG_PRESS" => Ok(ActionKind::LongPress),
            // the published action table misspells this one
            "COMPLETE" | "COMPELTE" => Ok(ActionKind::Complete),
            other => Err(UnknownKind(other.to_string())),
        }
    }
}

impl<'de> Deserialize<'de> for ActionKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
            Direction::Left => "LEFT",
            Direction::Right => "RIGHT",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UP" => Ok(Direction::Up),
            "DOWN" => Ok(Direction::Down),
            "LEFT" => Ok(Direction::Left),
            "RIGHT" => Ok(Direction::Right),
            _ => Err(format!("unknown scroll direction `{s}`")),
        }
    }
}

/// A screen position as fractions of width and height, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self, Violation> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Violation::new(format!("point ({x}, {y}) outside the unit square")));
        }
        Ok(Point { x, y })
    }
}

/// A typed GUI action. Payload rules are enforced by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Click(Point),
    LongPress(Point),
    Type(String),
    Scroll(Direction),
    PressBack,
    PressHome,
    Wait,
    Complete,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click(_) => ActionKind::Click,
            Action::LongPress(_) => ActionKind::LongPress,
            Action::Type(_) => ActionKind::Type,
            Action::Scroll(_) => ActionKind::Scroll,
            Action::PressBack => ActionKind::PressBack,
            Action::PressHome => ActionKind::PressHome,
            Action::Wait => ActionKind::Wait,
            Action::Complete => ActionKind::Complete,
        }
    }

    pub fn point(&self) -> Option<Point> {
        match self {
            Action::Click(p) | Action::LongPress(p) => Some(*p),
            _ => None,
        }
    }

    pub fn to_record(&self) -> ActionRecord {
        let mut rec = ActionRecord::bare(self.kind());
        match self {
            Action::Click(p) | Action::LongPress(p) => {
                rec.x = Some(p.x);
                rec.y = Some(p.y);
            }
            Action::Type(t) => rec.text = Some(t.clone()),
            Action::Scroll(d) => rec.direction = Some(*d),
            _ => {}
        }
        rec
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click(p) | Action::LongPress(p) => write!(f, "{}({:.4}, {:.4})", self.kind(), p.x, p.y),
            Action::Type(t) => write!(f, "TYPE({t:?})"),
            Action::Scroll(d) => write!(f, "SCROLL({})", d.as_str()),
            _ => write!(f, "{}()", self.kind()),
        }
    }
}

/// Exact structural equality: kind, point (bitwise fraction equality), text
/// and direction.
pub fn actions_equal(a: &Action, b: &Action) -> bool {
    a == b
}

/// A broken action invariant, described in words.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct Violation(pub String);

impl Violation {
    pub fn new(msg: impl Into<String>) -> Self {
        Violation(msg.into())
    }
}

/// Flat wire form of an action: `{"kind": "CLICK", "x": 0.31, "y": 0.62}`.
///
/// Any combination of fields can be represented here; [`validate_action`]
/// decides whether it is a legal [`Action`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl ActionRecord {
    pub fn bare(kind: ActionKind) -> Self {
        ActionRecord { kind, x: None, y: None, text: None, direction: None }
    }
}

/// Checks the payload rules of an action record.
pub fn validate_action(rec: &ActionRecord) -> Result<(), Violation> {
    Action::try_from(rec.clone()).map(|_| ())
}

impl TryFrom<ActionRecord> for Action {
    type Error = Violation;

    fn try_from(rec: ActionRecord) -> Result<Self, Self::Error> {
        let kind = rec.kind;
        let has_point = rec.x.is_some() || rec.y.is_some();
        if kind.takes_point() {
            let (Some(x), Some(y)) = (rec.x, rec.y) else {
                return Err(Violation::new(format!("point required for {kind}")));
            };
            if rec.text.is_some() || rec.direction.is_some() {
                return Err(Violation::new(format!("{kind} carries only a point")));
            }
            let p = Point::new(x, y)?;
            return Ok(if kind == ActionKind::Click { Action::Click(p) } else { Action::LongPress(p) });
        }
        match kind {
            ActionKind::Type => {
                if has_point || rec.direction.is_some() {
                    return Err(Violation::new("TYPE carries only text"));
                }
                rec.text.map(Action::Type).ok_or_else(|| Violation::new("text required for TYPE"))
            }
            ActionKind::Scroll => {
                if has_point || rec.text.is_some() {
                    return Err(Violation::new("SCROLL carries only a direction"));
                }
                rec.direction.map(Action::Scroll).ok_or_else(|| Violation::new("direction required for SCROLL"))
            }
            _ => {
                if has_point || rec.text.is_some() || rec.direction.is_some() {
                    return Err(Violation::new(format!("{kind} carries no payload")));
                }
                Ok(match kind {
                    ActionKind::PressBack => Action::PressBack,
                    ActionKind::PressHome => Action::PressHome,
                    ActionKind::Wait => Action::Wait,
                    _ => Action::Complete,
                })
            }
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = ActionRecord::deserialize(d)?;
        Action::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenshotRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub step_index: usize,
}

impl ScreenshotRef {
    pub fn check(&self) -> Result<(), Violation> {
        if self.path.is_empty() {
            return Err(Violation::new("screenshot path is empty"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Violation::new(format!(
                "screenshot {} has non-positive size {}x{}",
                self.path, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// One annotated test screen: the intent-aligned action and the set of
/// acceptable actions it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub screenshot: ScreenshotRef,
    pub intent_aligned: Action,
    pub ground_truth: Vec<Action>,
}

impl Step {
    pub fn check(&self) -> Result<(), Violation> {
        self.screenshot.check()?;
        if self.ground_truth.is_empty() {
            return Err(Violation::new("ground_truth is empty"));
        }
        if !self.ground_truth.iter().any(|g| actions_equal(g, &self.intent_aligned)) {
            return Err(Violation::new(format!(
                "intent_aligned action {} is not in ground_truth",
                self.intent_aligned
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub user_id: String,
    pub scenario: String,
    pub query: String,
    pub steps: Vec<Step>,
}

/// A demonstration: query plus screenshots, no action annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportTrajectory {
    pub user_id: String,
    pub scenario: String,
    pub query: String,
    pub screenshots: Vec<ScreenshotRef>,
}

impl SupportTrajectory {
    pub fn check(&self) -> Result<(), Violation> {
        if self.query.trim().is_empty() {
            return Err(Violation::new("support query is empty"));
        }
        if self.screenshots.is_empty() {
            return Err(Violation::new("support trajectory has no screenshots"));
        }
        self.screenshots.iter().try_for_each(ScreenshotRef::check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Language {
    En,
    Zh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HabitEntry {
    pub statement: String,
    pub source_query: String,
}

/// Append-only list of habit statements learned for one user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HabitRepository {
    entries: Vec<HabitEntry>,
}

impl HabitRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<HabitEntry>) -> Self {
        HabitRepository { entries }
    }

    pub fn push(&mut self, statement: impl Into<String>, source_query: impl Into<String>) {
        self.entries.push(HabitEntry { statement: statement.into(), source_query: source_query.into() });
    }

    pub fn entries(&self) -> &[HabitEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Prompt-facing form: one `- statement` line per habit.
    pub fn render(&self) -> String {
        self.entries.iter().map(|e| format!("- {}", e.statement)).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub user_id: String,
    pub language: Language,
    #[serde(default)]
    pub habits: HabitRepository,
}
