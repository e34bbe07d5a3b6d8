//! Environments the agent acts in: deterministic replay fixtures, a wire
//! protocol for live adapters, and HTML simplification.

mod adapter;
mod fixture;
mod library;
mod simplify;

use thiserror::Error;

use crate::domain::{Action, Observation, TaskSpec};

pub use adapter::{
    serve_adapter, AdapterClient, AdapterRequest, AdapterResponse, AdapterVerb, ErrorBody, ErrorCode,
    WireAction, WireObservation,
};
pub use fixture::{
    ActionMatcher, ArgumentMode, FixtureState, MatchMode, Next, ReplayEnv, ReplayFixture,
    SuccessWhen, Transition,
};
pub use library::FixtureLibrary;
pub use simplify::{simplify_html, TRUNCATION_MARKER};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error("no transition for `{action}` in state {state}")]
    Divergence { action: String, state: usize },
    #[error("environment has not been reset")]
    NotReset,
    #[error("environment is terminal")]
    Terminal,
    #[error("adapter error [{code}]: {message}")]
    Adapter { code: String, message: String },
    #[error("io error: {0}")]
    Io(String),
}

/// One episode's worth of interaction with a website.
///
/// Instances are single-threaded; run concurrent episodes on separate
/// instances.
pub trait Environment: Send {
    /// Starts `task` and returns the first, non-terminal observation.
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError>;

    /// Applies one action. An `Exit` always ends the episode.
    fn step(&mut self, action: &Action) -> Result<Observation, EnvError>;

    /// The current observation without acting.
    fn observe(&self) -> Result<Observation, EnvError>;

    /// The environment's success judgment, available once terminal.
    fn success(&self) -> Option<bool>;
}

/// Creates a fresh environment for a task.
pub trait EnvFactory: Send + Sync {
    fn create(&self, task: &TaskSpec) -> Result<Box<dyn Environment>, EnvError>;
}
