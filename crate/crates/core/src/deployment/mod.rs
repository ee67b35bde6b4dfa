//! Query-time pipeline: retrieve a similar demonstration, extract an SOP
//! for the new query few-shot, personalise query and SOP with the user's
//! habits, then ask the mobile-use agent for the next action and parse it.
//!
//! Planning (embed, retrieve, extract, rewrite) depends only on the user and
//! the query, so [`Deployer::plan`] runs it once and [`Deployer::act_on`]
//! reuses the result for every screen of the task. [`Deployer::run_step`]
//! does both for a single screen.

mod grammar;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatAgent, EmbedBackend, GatewayError};
use crate::model::{Action, HabitRepository, ScreenshotRef, UserProfile};
use crate::prompt::{self, CallError, Template, TemplateError};
use crate::registry::UnknownStrategy;
use crate::store::{Retrieved, SopStore, StoreError};

pub use grammar::{
    build_grammar, grammars, ActionGrammar, ActionParseError, Canonical, CoordinateBasis, GrammarRegistry, OsAtlas,
    QwenVl, UiTars,
};

pub const DEFAULT_K_SHOTS: usize = 1;
pub const DEFAULT_ADAPTER: &str = "canonical";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentConfig {
    pub k_shots: usize,
    pub adapter: String,
    /// Record the assembled prompts in traces.
    pub verbose: bool,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig { k_shots: DEFAULT_K_SHOTS, adapter: DEFAULT_ADAPTER.into(), verbose: false }
    }
}

/// Extractor and rewriter templates, plus an optional agent template that
/// replaces the adapter's bundled one.
#[derive(Debug, Clone)]
pub struct DeploymentPrompts {
    pub extractor: Template,
    pub rewriter: Template,
    pub agent: Option<Template>,
}

impl DeploymentPrompts {
    pub const EXTRACTOR_VARS: &'static [&'static str] = &["query", "shots"];
    pub const REWRITER_VARS: &'static [&'static str] = &["query", "sop", "habits"];
    pub const AGENT_VARS: &'static [&'static str] = &["query", "sop"];
}

impl Default for DeploymentPrompts {
    fn default() -> Self {
        DeploymentPrompts {
            extractor: Template::new("extractor", prompt::EXTRACTOR, Self::EXTRACTOR_VARS).expect("bundled template"),
            rewriter: Template::new("rewriter", prompt::REWRITER, Self::REWRITER_VARS).expect("bundled template"),
            agent: None,
        }
    }
}

/// The three chat roles used at query time.
pub struct DeploymentAgents {
    pub extractor: ChatAgent,
    pub rewriter: ChatAgent,
    pub agent: ChatAgent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub rewritten_query: String,
    pub rewritten_sop: Vec<String>,
}

/// A retrieved demonstration used as a few-shot example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub query: String,
    pub sop: Vec<String>,
    pub score: f64,
}

impl From<Retrieved> for Shot {
    fn from(r: Retrieved) -> Self {
        Shot { query: r.query, sop: r.sop, score: r.score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeployStage {
    Embed,
    Retrieve,
    Extract,
    Rewrite,
    Act,
    Parse,
}

impl fmt::Display for DeployStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeployStage::Embed => "query embedding",
            DeployStage::Retrieve => "SOP retrieval",
            DeployStage::Extract => "SOP extraction",
            DeployStage::Rewrite => "query rewriting",
            DeployStage::Act => "agent call",
            DeployStage::Parse => "action parsing",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeployFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Parse(#[from] ActionParseError),
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct DeployError {
    pub stage: DeployStage,
    #[source]
    pub source: Arc<DeployFailure>,
}

impl DeployError {
    fn new(stage: DeployStage, source: impl Into<DeployFailure>) -> Self {
        DeployError { stage, source: Arc::new(source.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceError {
    pub stage: DeployStage,
    pub message: String,
}

impl From<&DeployError> for TraceError {
    fn from(e: &DeployError) -> Self {
        TraceError { stage: e.stage, message: e.source.to_string() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePrompts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewriter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

/// Every intermediate value of one step, in pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub user_id: String,
    pub query: String,
    pub step_index: usize,
    /// Similarity of the best stored query above the threshold.
    pub retrieval_score: Option<f64>,
    pub matched_query: Option<String>,
    pub shots: Vec<Shot>,
    pub sop: Option<Vec<String>>,
    pub rewritten_query: Option<String>,
    pub rewritten_sop: Option<Vec<String>>,
    pub raw_action: Option<String>,
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TraceError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<TracePrompts>,
}

impl StepTrace {
    fn new(user_id: &str, query: &str) -> Self {
        StepTrace {
            user_id: user_id.to_string(),
            query: query.to_string(),
            step_index: 0,
            retrieval_score: None,
            matched_query: None,
            shots: Vec::new(),
            sop: None,
            rewritten_query: None,
            rewritten_sop: None,
            raw_action: None,
            action: None,
            error: None,
            prompts: None,
        }
    }
}

/// Outcome of planning one query: the trace so far and the rewrite, or the
/// error that stopped planning.
#[derive(Debug, Clone)]
pub struct Plan {
    pub trace: StepTrace,
    pub outcome: Result<RewriteResult, DeployError>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub trace: StepTrace,
    pub outcome: Result<(Action, RewriteResult), DeployError>,
}

pub struct Deployer {
    config: DeploymentConfig,
    prompts: DeploymentPrompts,
    agent_prompt: Template,
    grammar: Box<dyn ActionGrammar>,
    agents: DeploymentAgents,
    embedder: Box<dyn EmbedBackend>,
}

#[derive(Debug, thiserror::Error)]
pub enum DeployerSetupError {
    #[error(transparent)]
    Adapter(#[from] UnknownStrategy),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl Deployer {
    pub fn new(
        config: DeploymentConfig,
        prompts: DeploymentPrompts,
        agents: DeploymentAgents,
        embedder: Box<dyn EmbedBackend>,
    ) -> Result<Self, DeployerSetupError> {
        let grammar = build_grammar(&config.adapter)?;
        let agent_prompt = match &prompts.agent {
            Some(t) => t.clone(),
            None => Template::new(
                format!("agent_{}", config.adapter),
                grammar.default_prompt(),
                DeploymentPrompts::AGENT_VARS,
            )?,
        };
        Ok(Deployer { config, prompts, agent_prompt, grammar, agents, embedder })
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn grammar(&self) -> &dyn ActionGrammar {
        self.grammar.as_ref()
    }

    pub fn extractor_prompt(&self, query: &str, shots: &[Shot]) -> String {
        let pairs: Vec<(String, Vec<String>)> = shots.iter().map(|s| (s.query.clone(), s.sop.clone())).collect();
        let demos = prompt::render_demonstrations(&pairs);
        self.prompts.extractor.render(&[("query", query), ("shots", &demos)])
    }

    /// SOP for `query`, written few-shot from `shots` (zero-shot when empty).
    pub fn extract_sop(&self, query: &str, shots: &[Shot]) -> Result<Vec<String>, CallError> {
        if query.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("query is empty".into()).into());
        }
        let raw = self.agents.extractor.ask(&self.extractor_prompt(query, shots), &[])?;
        prompt::parse_numbered_steps(&raw).ok_or(CallError::Unparseable { expected: "numbered SOP lines", raw })
    }

    pub fn rewriter_prompt(&self, query: &str, sop: &[String], habits: &HabitRepository) -> String {
        let steps = prompt::render_steps(sop);
        let habits = habits.render();
        self.prompts.rewriter.render(&[("query", query), ("sop", &steps), ("habits", &habits)])
    }

    pub fn rewrite(&self, query: &str, sop: &[String], habits: &HabitRepository) -> Result<RewriteResult, CallError> {
        if query.trim().is_empty() || sop.is_empty() {
            return Err(GatewayError::InvalidRequest("rewrite needs a query and a nonempty SOP".into()).into());
        }
        let raw = self.agents.rewriter.ask(&self.rewriter_prompt(query, sop, habits), &[])?;
        match prompt::parse_rewrite(&raw) {
            Some((rewritten_query, rewritten_sop)) => Ok(RewriteResult { rewritten_query, rewritten_sop }),
            None => Err(CallError::Unparseable { expected: "QUERY: line followed by numbered SOP", raw }),
        }
    }

    pub fn agent_prompt(&self, query: &str, sop: &[String], screen: &ScreenshotRef) -> String {
        let vars = grammar::agent_vars(query, sop, screen);
        let refs: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (*k, v.as_str())).collect();
        self.agent_prompt.render(&refs)
    }

    /// Raw agent reply for one screen; the screenshot is attached once.
    pub fn act(&self, query: &str, sop: &[String], screen: &ScreenshotRef) -> Result<String, GatewayError> {
        self.agents.agent.ask(&self.agent_prompt(query, sop, screen), std::slice::from_ref(screen))
    }

    pub fn parse_action(&self, raw: &str, screen: &ScreenshotRef) -> Result<Action, ActionParseError> {
        self.grammar.parse(raw, screen)
    }

    /// Embeds, retrieves, extracts and rewrites for `query`.
    pub fn plan(&self, store: &SopStore, user: &UserProfile, query: &str) -> Plan {
        let mut trace = StepTrace::new(&user.user_id, query);
        let outcome = self.plan_into(store, user, query, &mut trace);
        if let Err(e) = &outcome {
            trace.error = Some(e.into());
        }
        Plan { trace, outcome }
    }

    fn plan_into(
        &self,
        store: &SopStore,
        user: &UserProfile,
        query: &str,
        trace: &mut StepTrace,
    ) -> Result<RewriteResult, DeployError> {
        let embedding = self.embedder.embed(query).map_err(|e| DeployError::new(DeployStage::Embed, e))?;
        let best = store.retrieve(&user.user_id, &embedding).map_err(|e| DeployError::new(DeployStage::Retrieve, e))?;
        if let Some(hit) = &best {
            trace.retrieval_score = Some(hit.score);
            trace.matched_query = Some(hit.query.clone());
        }
        let shots: Vec<Shot> = store
            .retrieve_top_k(&user.user_id, &embedding, self.config.k_shots)
            .map_err(|e| DeployError::new(DeployStage::Retrieve, e))?
            .into_iter()
            .map(Shot::from)
            .collect();
        trace.shots = shots.clone();

        if self.config.verbose {
            trace.prompts.get_or_insert_with(Default::default).extractor = Some(self.extractor_prompt(query, &shots));
        }
        let sop = self.extract_sop(query, &shots).map_err(|e| DeployError::new(DeployStage::Extract, e))?;
        trace.sop = Some(sop.clone());

        if self.config.verbose {
            trace.prompts.get_or_insert_with(Default::default).rewriter =
                Some(self.rewriter_prompt(query, &sop, &user.habits));
        }
        let rewrite = self.rewrite(query, &sop, &user.habits).map_err(|e| DeployError::new(DeployStage::Rewrite, e))?;
        trace.rewritten_query = Some(rewrite.rewritten_query.clone());
        trace.rewritten_sop = Some(rewrite.rewritten_sop.clone());
        Ok(rewrite)
    }

    /// Asks the agent for the action on `screen`, continuing from `plan`.
    pub fn act_on(&self, plan: &Plan, step_index: usize, screen: &ScreenshotRef) -> StepOutcome {
        let mut trace = plan.trace.clone();
        trace.step_index = step_index;
        let rewrite = match &plan.outcome {
            Ok(r) => r.clone(),
            Err(e) => return StepOutcome { trace, outcome: Err(e.clone()) },
        };
        if self.config.verbose {
            trace.prompts.get_or_insert_with(Default::default).agent =
                Some(self.agent_prompt(&rewrite.rewritten_query, &rewrite.rewritten_sop, screen));
        }
        let outcome = self
            .act(&rewrite.rewritten_query, &rewrite.rewritten_sop, screen)
            .map_err(|e| DeployError::new(DeployStage::Act, e))
            .and_then(|raw| {
                trace.raw_action = Some(raw.clone());
                self.parse_action(&raw, screen).map_err(|e| DeployError::new(DeployStage::Parse, e))
            });
        match outcome {
            Ok(action) => {
                trace.action = Some(action.clone());
                StepOutcome { trace, outcome: Ok((action, rewrite)) }
            }
            Err(e) => {
                trace.error = Some((&e).into());
                StepOutcome { trace, outcome: Err(e) }
            }
        }
    }

    /// The whole query-time pipeline for one screen.
    pub fn run_step(&self, store: &SopStore, user: &UserProfile, query: &str, screen: &ScreenshotRef) -> StepOutcome {
        let plan = self.plan(store, user, query);
        self.act_on(&plan, screen.step_index, screen)
    }
}
