//! Dataset files: a single JSON document with `users`, `support`, `test`
//! (and optionally `sft`) sections, plus JSON-lines SFT export for the
//! query-rewriter warm-up.
//!
//! Actions may be annotated with pixel coordinates (`"px"`, `"py"`); they are
//! converted to fractions of the step's screenshot at load time and always
//! saved as fractions (`"x"`, `"y"`).

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{
    Action, ActionKind, ActionRecord, Direction, HabitRepository, ScreenshotRef, Step, SupportTrajectory, Trajectory,
    UserProfile,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not valid JSON: {source}")]
    Syntax { path: PathBuf, source: serde_json::Error },
    #[error("schema violation at {at}: {message}")]
    Schema { at: String, message: String },
    #[error("invariant violation at {at}: {message}")]
    Invariant { at: String, message: String },
    #[error("empty SFT export")]
    EmptySft,
    #[error("SFT record {index}: field `{field}` is empty")]
    InvalidSft { index: usize, field: &'static str },
}

fn schema(at: impl Into<String>, message: impl ToString) -> DatasetError {
    DatasetError::Schema { at: at.into(), message: message.to_string() }
}

fn invariant(at: impl Into<String>, message: impl ToString) -> DatasetError {
    DatasetError::Invariant { at: at.into(), message: message.to_string() }
}

/// One warm-up sample for the query rewriter: the ambiguous query and its
/// SOP, the user's habits, and the personalised query and SOP to predict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftRecord {
    pub query: String,
    pub sop: String,
    pub habits: String,
    pub rewritten_query: String,
    pub rewritten_sop: String,
}

impl SftRecord {
    pub fn empty_field(&self) -> Option<&'static str> {
        [
            ("query", &self.query),
            ("sop", &self.sop),
            ("habits", &self.habits),
            ("rewritten_query", &self.rewritten_query),
            ("rewritten_sop", &self.rewritten_sop),
        ]
        .into_iter()
        .find(|(_, v)| v.trim().is_empty())
        .map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: Vec<UserProfile>,
    pub support: Vec<SupportTrajectory>,
    pub test: Vec<Trajectory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sft: Vec<SftRecord>,
}

impl Dataset {
    pub fn user(&self, id: &str) -> Option<&UserProfile> {
        self.users.iter().find(|u| u.user_id == id)
    }

    pub fn support_for<'a>(&'a self, user: &'a str) -> impl Iterator<Item = &'a SupportTrajectory> + 'a {
        self.support.iter().filter(move |t| t.user_id == user)
    }

    /// Checks every referential and model invariant.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashSet::new();
        for (i, u) in self.users.iter().enumerate() {
            if u.user_id.trim().is_empty() {
                return Err(schema(format!("users[{i}].user_id"), "empty user id"));
            }
            if !ids.insert(u.user_id.as_str()) {
                return Err(invariant(format!("users[{i}]"), format!("duplicate user_id `{}`", u.user_id)));
            }
        }
        let mut support_keys = BTreeSet::new();
        for (i, t) in self.support.iter().enumerate() {
            let at = format!("support[{i}]");
            if !ids.contains(t.user_id.as_str()) {
                return Err(schema(format!("{at}.user_id"), format!("unknown user_id `{}`", t.user_id)));
            }
            t.check().map_err(|v| invariant(&at, v))?;
            support_keys.insert((t.user_id.as_str(), t.query.as_str()));
        }
        let mut test_keys = BTreeSet::new();
        for (i, t) in self.test.iter().enumerate() {
            let at = format!("test[{i}]");
            if !ids.contains(t.user_id.as_str()) {
                return Err(schema(format!("{at}.user_id"), format!("unknown user_id `{}`", t.user_id)));
            }
            if t.query.trim().is_empty() {
                return Err(invariant(format!("{at}.query"), "empty query"));
            }
            if t.steps.is_empty() {
                return Err(invariant(format!("{at}.steps"), "trajectory has no steps"));
            }
            for (j, s) in t.steps.iter().enumerate() {
                s.check().map_err(|v| invariant(format!("{at}.steps[{j}]"), v))?;
            }
            if !test_keys.insert((t.user_id.as_str(), t.query.as_str())) {
                return Err(invariant(
                    &at,
                    format!("query `{}` of user `{}` occurs twice in test", t.query, t.user_id),
                ));
            }
            if support_keys.contains(&(t.user_id.as_str(), t.query.as_str())) {
                return Err(invariant(
                    &at,
                    format!("query `{}` of user `{}` is in both support and test", t.query, t.user_id),
                ));
            }
        }
        for (i, r) in self.sft.iter().enumerate() {
            if let Some(field) = r.empty_field() {
                return Err(DatasetError::InvalidSft { index: i, field });
            }
        }
        Ok(())
    }
}

// Raw input forms. Everything is deserialized record by record so errors can
// name the offending index.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    kind: ActionKind,
    x: Option<f64>,
    y: Option<f64>,
    px: Option<f64>,
    py: Option<f64>,
    text: Option<String>,
    direction: Option<Direction>,
}

impl RawAction {
    fn resolve(self, screen: &ScreenshotRef) -> Result<Action, String> {
        let (x, y) = match (self.x, self.y, self.px, self.py) {
            (x, y, None, None) => (x, y),
            (None, None, px, py) => {
                let conv = |v: Option<f64>, extent: u32, axis: &str| -> Result<Option<f64>, String> {
                    match v {
                        None => Ok(None),
                        Some(v) if (0.0..=extent as f64).contains(&v) => Ok(Some(v / extent as f64)),
                        Some(v) => Err(format!("pixel {axis} {v} outside 0..={extent}")),
                    }
                };
                (conv(px, screen.width, "x")?, conv(py, screen.height, "y")?)
            }
            _ => return Err("mixes fractional (x/y) and pixel (px/py) coordinates".into()),
        };
        let rec = ActionRecord { kind: self.kind, x, y, text: self.text, direction: self.direction };
        Action::try_from(rec).map_err(|v| v.0)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    screenshot: ScreenshotRef,
    intent_aligned: Value,
    ground_truth: Vec<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    user_id: String,
    scenario: String,
    query: String,
    steps: Vec<Value>,
}

fn section<'a>(doc: &'a Value, name: &str, required: bool) -> Result<&'a [Value], DatasetError> {
    match doc.get(name) {
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(schema(name, "expected an array")),
        None if required => Err(schema(name, "missing section")),
        None => Ok(&[]),
    }
}

fn record<T: DeserializeOwned>(v: &Value, at: &str) -> Result<T, DatasetError> {
    T::deserialize(v).map_err(|e| schema(at, e))
}

fn parse_test(v: &Value, at: &str) -> Result<Trajectory, DatasetError> {
    let raw: RawTrajectory = record(v, at)?;
    let mut steps = Vec::with_capacity(raw.steps.len());
    for (j, sv) in raw.steps.iter().enumerate() {
        let sat = format!("{at}.steps[{j}]");
        let rs: RawStep = record(sv, &sat)?;
        rs.screenshot.check().map_err(|e| invariant(format!("{sat}.screenshot"), e))?;
        let action = |v: &Value, where_: String| -> Result<Action, DatasetError> {
            let ra: RawAction = record(v, &where_)?;
            ra.resolve(&rs.screenshot).map_err(|m| invariant(where_, m))
        };
        let intent_aligned = action(&rs.intent_aligned, format!("{sat}.intent_aligned"))?;
        let ground_truth = rs
            .ground_truth
            .iter()
            .enumerate()
            .map(|(k, g)| action(g, format!("{sat}.ground_truth[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        steps.push(Step { screenshot: rs.screenshot, intent_aligned, ground_truth });
    }
    Ok(Trajectory { user_id: raw.user_id, scenario: raw.scenario, query: raw.query, steps })
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<Dataset, DatasetError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|source| DatasetError::Syntax { path: origin.to_path_buf(), source })?;
    let Value::Object(map) = &doc else {
        return Err(schema("$", "expected a JSON object"));
    };
    if let Some(k) = map.keys().find(|k| !matches!(k.as_str(), "users" | "support" | "test" | "sft")) {
        return Err(schema(k.as_str(), "unknown section"));
    }
    let users = section(&doc, "users", true)?
        .iter()
        .enumerate()
        .map(|(i, v)| record::<UserProfile>(v, &format!("users[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let support = section(&doc, "support", true)?
        .iter()
        .enumerate()
        .map(|(i, v)| record::<SupportTrajectory>(v, &format!("support[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let test = section(&doc, "test", true)?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_test(v, &format!("test[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let sft = section(&doc, "sft", false)?
        .iter()
        .enumerate()
        .map(|(i, v)| record::<SftRecord>(v, &format!("sft[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let d = Dataset { users, support, test, sft };
    d.validate()?;
    Ok(d)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text, path)
}

/// Canonical text form: pretty-printed JSON in declaration key order with a
/// trailing newline.
pub fn to_canonical_json(d: &Dataset) -> String {
    let mut s = serde_json::to_string_pretty(d).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    std::fs::write(path, to_canonical_json(d)).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Writes one JSON object per line. An empty list is an error rather than an
/// empty file.
pub fn export_sft(records: &[SftRecord], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(DatasetError::EmptySft);
    }
    for (index, r) in records.iter().enumerate() {
        if let Some(field) = r.empty_field() {
            return Err(DatasetError::InvalidSft { index, field });
        }
    }
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_sft(path: impl AsRef<Path>) -> Result<Vec<SftRecord>, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let f = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SftRecord = serde_json::from_str(&line).map_err(|e| schema(format!("line {}", i + 1), e))?;
        if let Some(field) = r.empty_field() {
            return Err(DatasetError::InvalidSft { index: out.len(), field });
        }
        out.push(r);
    }
    Ok(out)
}

/// Builds a warm-up record from a deployment outcome.
pub fn sft_record(
    query: &str,
    sop: &[String],
    habits: &HabitRepository,
    rewritten_query: &str,
    rewritten_sop: &[String],
) -> SftRecord {
    SftRecord {
        query: query.to_string(),
        sop: crate::prompt::render_steps(sop),
        habits: habits.render(),
        rewritten_query: rewritten_query.to_string(),
        rewritten_sop: crate::prompt::render_steps(rewritten_sop),
    }
}
