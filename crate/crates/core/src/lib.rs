//! Personalised mobile GUI automation from user demonstrations.
//!
//! Demonstrations are analysed into per-user SOP libraries and habit
//! repositories ([`extraction`]). At query time a similar demonstration is
//! retrieved, an SOP is written for the new query, query and SOP are
//! personalised and a mobile-use agent picks the next action
//! ([`deployment`]). Predictions are scored against annotated steps by
//! [`eval`].

pub mod dataset;
pub mod deployment;
pub mod eval;
pub mod extraction;
pub mod gateway;
pub mod model;
pub mod prompt;
pub mod registry;
pub mod store;

pub use deployment::{Deployer, DeploymentAgents, DeploymentConfig, DeploymentPrompts, RewriteResult, StepTrace};
pub use eval::{aggregate, match_action, EvalReport, MatchPolicy};
pub use extraction::{ExtractionPrompts, Extractor};
pub use model::{
    Action, ActionKind, Direction, Point, ScreenshotRef, Step, SupportTrajectory, Trajectory, UserProfile,
};
pub use store::{SopEntry, SopStore};
