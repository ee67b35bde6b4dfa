//! Step-wise action matching and the SR / Type / IAR metrics.
//!
//! * SR: the prediction matches any acceptable action of the step.
//! * Type: the prediction's kind equals the kind of any acceptable action.
//! * IAR: the prediction matches the single intent-aligned action.
//!
//! Since the intent-aligned action is one of the acceptable actions and a
//! match implies equal kinds, every step satisfies
//! `intent ⇒ ground truth ⇒ type`, hence `IAR ≤ SR ≤ Type`.

mod report;
mod text;

use serde::{Deserialize, Serialize};

use crate::model::{actions_equal, Action, Step};
use crate::registry::UnknownStrategy;

pub use report::{check_ordering, EvalReport, OrderingViolation, ScenarioStats, StepMatch};
pub use text::{text_metrics, text_similarity, NormalizedLevenshtein, TextMetric, TextMetricRegistry};

/// Slack applied to both strict comparisons so that a difference that is
/// exactly the threshold in decimal (e.g. `0.64 - 0.50` vs `0.14`) is not
/// flipped by binary rounding.
pub const FLOAT_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to aggregate")]
    Empty,
    #[error("invalid match policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Unknown(#[from] UnknownStrategy),
}

/// How the prediction is compared with the intent-aligned action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentMatch {
    /// Same tolerance rules as SR.
    #[default]
    Tolerance,
    /// Exact structural equality.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchPolicy {
    /// Per-axis tolerance in screen fractions for CLICK / LONG_PRESS
    /// (strict `<`).
    pub click_rel_err: f64,
    /// Minimum text similarity for TYPE (strict `>`).
    pub text_sim_min: f64,
    pub text_metric: String,
    pub intent_match: IntentMatch,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            click_rel_err: 0.14,
            text_sim_min: 0.80,
            text_metric: "normalized_levenshtein".into(),
            intent_match: IntentMatch::Tolerance,
        }
    }
}

impl MatchPolicy {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.click_rel_err > 0.0 && self.click_rel_err < 1.0) {
            return Err(EvalError::Policy(format!("click_rel_err {} not in (0, 1)", self.click_rel_err)));
        }
        if !(self.text_sim_min > 0.0 && self.text_sim_min < 1.0) {
            return Err(EvalError::Policy(format!("text_sim_min {} not in (0, 1)", self.text_sim_min)));
        }
        text_metrics().build(&self.text_metric, &())?;
        Ok(())
    }

    /// Applies `key=value` overrides separated by commas, e.g.
    /// `click_rel_err=0.1,intent_match=exact`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<(), EvalError> {
        for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) =
                pair.split_once('=').ok_or_else(|| EvalError::Policy(format!("expected key=value, got `{pair}`")))?;
            let num = || v.trim().parse::<f64>().map_err(|e| EvalError::Policy(format!("{k}: {e}")));
            match k.trim() {
                "click_rel_err" => self.click_rel_err = num()?,
                "text_sim_min" => self.text_sim_min = num()?,
                "text_metric" => self.text_metric = v.trim().to_string(),
                "intent_match" | "intent" => {
                    self.intent_match = match v.trim() {
                        "tolerance" => IntentMatch::Tolerance,
                        "exact" => IntentMatch::Exact,
                        other => return Err(EvalError::Policy(format!("intent_match `{other}`"))),
                    }
                }
                other => return Err(EvalError::Policy(format!("unknown policy key `{other}`"))),
            }
        }
        self.validate()
    }
}

/// A [`MatchPolicy`] with its text metric resolved.
pub struct Matcher {
    policy: MatchPolicy,
    metric: Box<dyn TextMetric>,
}

impl Matcher {
    pub fn new(policy: &MatchPolicy) -> Result<Self, EvalError> {
        policy.validate()?;
        Ok(Matcher { metric: text_metrics().build(&policy.text_metric, &())?, policy: policy.clone() })
    }

    pub fn policy(&self) -> &MatchPolicy {
        &self.policy
    }

    pub fn matches(&self, pred: &Action, gt: &Action) -> bool {
        match (pred, gt) {
            (Action::Click(p), Action::Click(g)) | (Action::LongPress(p), Action::LongPress(g)) => {
                let tol = self.policy.click_rel_err - FLOAT_SLACK;
                (p.x - g.x).abs() < tol && (p.y - g.y).abs() < tol
            }
            (Action::Type(p), Action::Type(g)) => self.metric.similarity(p, g) > self.policy.text_sim_min + FLOAT_SLACK,
            (Action::Scroll(p), Action::Scroll(g)) => p == g,
            // remaining equal-kind pairs carry no payload
            _ => pred.kind() == gt.kind(),
        }
    }

    pub fn evaluate_step(&self, pred: &Action, step: &Step) -> StepMatch {
        let matched_gt = step.ground_truth.iter().any(|g| self.matches(pred, g));
        let matched_type = step.ground_truth.iter().any(|g| g.kind() == pred.kind());
        let matched_intent = match self.policy.intent_match {
            IntentMatch::Tolerance => self.matches(pred, &step.intent_aligned),
            IntentMatch::Exact => actions_equal(pred, &step.intent_aligned),
        };
        StepMatch { matched_gt, matched_type, matched_intent }
    }

    /// `pred = None` stands for a step where the agent produced no usable
    /// action; it counts as a miss on every metric.
    pub fn aggregate<'a, I>(&self, steps: I) -> Result<EvalReport, EvalError>
    where
        I: IntoIterator<Item = (Option<&'a Action>, &'a Step, &'a str)>,
    {
        let per_step: Vec<(String, StepMatch)> = steps
            .into_iter()
            .map(|(pred, step, scenario)| {
                let m = pred.map(|p| self.evaluate_step(p, step)).unwrap_or_default();
                (scenario.to_string(), m)
            })
            .collect();
        if per_step.is_empty() {
            return Err(EvalError::Empty);
        }
        Ok(EvalReport::from_matches(per_step))
    }
}

pub fn match_action(pred: &Action, gt: &Action, policy: &MatchPolicy) -> Result<bool, EvalError> {
    Ok(Matcher::new(policy)?.matches(pred, gt))
}

pub fn evaluate_step(pred: &Action, step: &Step, policy: &MatchPolicy) -> Result<StepMatch, EvalError> {
    Ok(Matcher::new(policy)?.evaluate_step(pred, step))
}

/// Aggregates `(prediction, step)` pairs into one unscoped report; all steps
/// go under the scenario `"all"`.
pub fn aggregate(steps: &[(Action, Step)], policy: &MatchPolicy) -> Result<EvalReport, EvalError> {
    Matcher::new(policy)?.aggregate(steps.iter().map(|(a, s)| (Some(a), s, "all")))
}
