//! Demonstration analysis: turn a user's support trajectories into stored
//! SOPs (explicit intention flow) and habit statements (implicit intention
//! flow).
//!
//! For each demonstration, in input order:
//! 1. the explicit agent writes the SOP `p_j` from the query and screenshots;
//! 2. the query is embedded as `l_j`;
//! 3. the implicit agent proposes new habits given the current repository;
//! 4. `(q_j, l_j, p_j)` is stored and the habits are appended.
//!
//! All model calls for a demonstration happen before anything is committed,
//! so a failing demonstration leaves the store and the profile exactly as the
//! previous demonstrations left them.

use std::fmt;

use crate::gateway::{ChatAgent, EmbedBackend, GatewayError};
use crate::model::{HabitRepository, SupportTrajectory, UserProfile};
use crate::prompt::{self, CallError, Template, TemplateError};
use crate::store::{SopEntry, SopStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Explicit,
    Embed,
    Implicit,
    Store,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Explicit => "explicit SOP extraction",
            Stage::Embed => "query embedding",
            Stage::Implicit => "habit update",
            Stage::Store => "store insert",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("support trajectory {index} ({query:?}) failed during {stage}: {source}")]
    Trajectory {
        index: usize,
        query: String,
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("support trajectory {index} belongs to `{found}`, not `{expected}`")]
    WrongUser { index: usize, expected: String, found: String },
    #[error("support trajectory {index} is invalid: {message}")]
    Invalid { index: usize, message: String },
}

/// The two demonstration-analysis prompts.
#[derive(Debug, Clone)]
pub struct ExtractionPrompts {
    pub explicit: Template,
    pub implicit: Template,
}

impl ExtractionPrompts {
    pub const EXPLICIT_VARS: &'static [&'static str] = &["query", "screenshots"];
    pub const IMPLICIT_VARS: &'static [&'static str] = &["query", "screenshots", "habits"];

    pub fn new(explicit: &str, implicit: &str) -> Result<Self, TemplateError> {
        Ok(ExtractionPrompts {
            explicit: Template::new("explicit", explicit, Self::EXPLICIT_VARS)?,
            implicit: Template::new("implicit", implicit, Self::IMPLICIT_VARS)?,
        })
    }
}

impl Default for ExtractionPrompts {
    fn default() -> Self {
        Self::new(prompt::EXPLICIT, prompt::IMPLICIT).expect("bundled templates are valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionSummary {
    pub sops_added: usize,
    pub habits_added: usize,
}

pub struct Extractor {
    prompts: ExtractionPrompts,
    explicit: ChatAgent,
    implicit: ChatAgent,
    embedder: Box<dyn EmbedBackend>,
}

impl Extractor {
    pub fn new(
        prompts: ExtractionPrompts,
        explicit: ChatAgent,
        implicit: ChatAgent,
        embedder: Box<dyn EmbedBackend>,
    ) -> Self {
        Extractor { prompts, explicit, implicit, embedder }
    }

    pub fn embedder(&self) -> &dyn EmbedBackend {
        self.embedder.as_ref()
    }

    /// SOP steps the user followed in `t`.
    pub fn extract_explicit(&self, t: &SupportTrajectory) -> Result<Vec<String>, CallError> {
        let shots = prompt::render_screenshots(&t.screenshots);
        let text = self.prompts.explicit.render(&[("query", &t.query), ("screenshots", &shots)]);
        let raw = self.explicit.ask(&text, &t.screenshots)?;
        prompt::parse_numbered_steps(&raw).ok_or(CallError::Unparseable { expected: "numbered SOP lines", raw })
    }

    /// Habit statements newly inferred from `t`, given the current repository.
    pub fn infer_habits(&self, habits: &HabitRepository, t: &SupportTrajectory) -> Result<Vec<String>, CallError> {
        let shots = prompt::render_screenshots(&t.screenshots);
        let known = if habits.is_empty() { "(none recorded yet)".to_string() } else { habits.render() };
        let text = self.prompts.implicit.render(&[("query", &t.query), ("screenshots", &shots), ("habits", &known)]);
        let raw = self.implicit.ask(&text, &t.screenshots)?;
        Ok(prompt::parse_habit_lines(&raw))
    }

    /// `habits` with the statements inferred from `t` appended.
    pub fn update_implicit(
        &self,
        habits: &HabitRepository,
        t: &SupportTrajectory,
    ) -> Result<HabitRepository, CallError> {
        let mut next = habits.clone();
        for statement in self.infer_habits(habits, t)? {
            next.push(statement, t.query.clone());
        }
        Ok(next)
    }

    /// Processes `support` in order for `user`, aborting on the first failing
    /// demonstration.
    pub fn run(
        &self,
        store: &mut SopStore,
        user: &mut UserProfile,
        support: &[SupportTrajectory],
    ) -> Result<ExtractionSummary, ExtractionError> {
        for (index, t) in support.iter().enumerate() {
            if t.user_id != user.user_id {
                return Err(ExtractionError::WrongUser {
                    index,
                    expected: user.user_id.clone(),
                    found: t.user_id.clone(),
                });
            }
            t.check().map_err(|v| ExtractionError::Invalid { index, message: v.0 })?;
        }
        let mut summary = ExtractionSummary::default();
        for (index, t) in support.iter().enumerate() {
            let fail = |stage: Stage, e: StageError| ExtractionError::Trajectory {
                index,
                query: t.query.clone(),
                stage,
                source: e,
            };
            let sop = self.extract_explicit(t).map_err(|e| fail(Stage::Explicit, e.into()))?;
            let embedding = self.embedder.embed(&t.query).map_err(|e| fail(Stage::Embed, e.into()))?;
            let habits = self.update_implicit(&user.habits, t).map_err(|e| fail(Stage::Implicit, e.into()))?;
            store
                .insert(&user.user_id, SopEntry { query_text: t.query.clone(), embedding, sop })
                .map_err(|e| fail(Stage::Store, e.into()))?;
            summary.sops_added += 1;
            summary.habits_added += habits.len() - user.habits.len();
            user.habits = habits;
        }
        Ok(summary)
    }
}
