//! The planner/executor loop with optional replanning after every action.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, Episode, Observation, Outcome, Plan, Round, TaskSpec};
use crate::dsl::{parse_action_text, render_action, render_call, render_numbered_actions, split_preamble, DslError};
use crate::env::{simplify_html, EnvError, EnvFactory, Environment};
use crate::par::par_map;
use crate::llm::{names, ChatMessage, CompletionError, ModelBinding, Slots, TemplateError, TemplateSet};
use crate::plan::{parse_plan, render_plan, split_plan_preamble, strip_reasoning, PlanError, PlanVariant};

/// Placeholder that replaces the html of every past round in model context.
pub const HTML_PLACEHOLDER: &str = "** Simplified html **";

pub const DEFAULT_STEP_BUDGET: usize = 15;
pub const DEFAULT_PARSE_RETRIES: usize = 2;
pub const DEFAULT_HTML_BUDGET: usize = 40_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningMode {
    /// One plan for the whole episode.
    Static,
    /// A fresh plan before every action after the first.
    #[default]
    Dynamic,
}

impl std::str::FromStr for PlanningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(PlanningMode::Static),
            "dynamic" => Ok(PlanningMode::Dynamic),
            other => Err(format!("unknown planning mode `{other}` (static|dynamic)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub planning_mode: PlanningMode,
    /// Accept a free-text reasoning preamble before plans and actions.
    pub cot: bool,
    pub step_budget: usize,
    pub parse_retries: usize,
    /// Maximum characters of simplified html per observation.
    pub html_budget: usize,
    /// Send the executor the plan with reasoning replaced by a marker.
    pub strip_reasoning: bool,
    pub templates: Arc<TemplateSet>,
    pub planner: ModelBinding,
    pub executor: ModelBinding,
    pub replanner: ModelBinding,
}

impl AgentConfig {
    /// Dynamic planning with default budgets; the replanner shares the
    /// planner's binding.
    pub fn new(planner: ModelBinding, executor: ModelBinding) -> Self {
        AgentConfig {
            planning_mode: PlanningMode::Dynamic,
            cot: false,
            step_budget: DEFAULT_STEP_BUDGET,
            parse_retries: DEFAULT_PARSE_RETRIES,
            html_budget: DEFAULT_HTML_BUDGET,
            strip_reasoning: false,
            templates: Arc::new(TemplateSet::builtin()),
            replanner: planner.clone(),
            planner,
            executor,
        }
    }

    pub fn with_mode(mut self, mode: PlanningMode) -> Self {
        self.planning_mode = mode;
        self
    }

    pub fn with_replanner(mut self, replanner: ModelBinding) -> Self {
        self.replanner = replanner;
        self
    }

    pub fn prompts(&self) -> Prompts<'_> {
        Prompts {
            templates: &self.templates,
            html_budget: self.html_budget,
            strip_reasoning: self.strip_reasoning,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.step_budget == 0 {
            return Err("step_budget must be at least 1".into());
        }
        if self.html_budget == 0 {
            return Err("html_budget must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("plan unparseable after {attempts} attempts: {error}")]
    PlanParse { attempts: usize, error: PlanError },
    #[error("action unparseable after {attempts} attempts: {error}")]
    ActionParse { attempts: usize, error: DslError },
    #[error(transparent)]
    Completion(#[from] CompletionError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// Model output parsed into a plan, with the raw text kept for the record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOutput {
    pub plan: Plan,
    pub raw: String,
    pub preamble: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionOutput {
    pub action: Action,
    pub raw: String,
    pub preamble: Option<String>,
}

/// A completed round as seen by later prompts.
#[derive(Debug, Clone, Copy)]
pub struct HistoryItem<'a> {
    pub plan: &'a Plan,
    pub action: &'a Action,
}

fn parse_plan_output(text: &str, cot: bool) -> Result<(Plan, Option<String>), PlanError> {
    if cot {
        if let Some((pre, body)) = split_plan_preamble(text) {
            let plan = parse_plan(body, PlanVariant::Plain)?;
            return Ok((plan, Some(pre).filter(|p| !p.is_empty())));
        }
    }
    Ok((parse_plan(text, PlanVariant::Plain)?, None))
}

fn parse_action_output(text: &str, cot: bool) -> Result<(Action, Option<String>), DslError> {
    if cot {
        if let Some((pre, block)) = split_preamble(text) {
            let action = parse_action_text(&block)?;
            return Ok((action, Some(pre).filter(|p| !p.is_empty())));
        }
    }
    Ok((parse_action_text(text)?, None))
}

/// Attempts made, the last parse error, and any hard failure.
type AskFailure<E> = (usize, Option<E>, Option<RuntimeError>);

/// Calls `binding`, re-asking with a reminder after each unparseable reply.
fn ask_with_retries<T, E: std::fmt::Display + Clone>(
    binding: &ModelBinding,
    templates: &TemplateSet,
    mut messages: Vec<ChatMessage>,
    retries: usize,
    reminder: &str,
    parse: impl Fn(&str) -> Result<T, E>,
) -> Result<(T, String), AskFailure<E>> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let raw = binding
            .complete(messages.clone())
            .map_err(|e| (attempt, None, Some(RuntimeError::from(e))))?;
        match parse(&raw) {
            Ok(v) => return Ok((v, raw)),
            Err(e) if attempt <= retries => {
                let note = templates
                    .render(reminder, &Slots::new().set("error", e.to_string()))
                    .map_err(|t| (attempt, None, Some(RuntimeError::from(t))))?;
                messages.push(ChatMessage::assistant(raw));
                messages.push(ChatMessage::user(note));
            }
            Err(e) => return Err((attempt, Some(e), None)),
        }
    }
}

/// Plain rendering used wherever a plan is shown to a model.
pub fn render_plan_text(plan: &Plan) -> String {
    render_plan(plan, PlanVariant::Plain).unwrap_or_else(|_| {
        plan.steps
            .iter()
            .map(|s| format!("## Step {}\nReasoning: {}\nStep: {}\n", s.number, s.reasoning, s.step))
            .collect::<Vec<_>>()
            .join("\n")
    })
}

/// Action text as shown to a model: comments and call.
pub fn action_text(action: &Action) -> String {
    render_action(action).unwrap_or_else(|_| render_call(action))
}

/// Prompt construction shared by the agent loop and the data pipeline.
#[derive(Debug, Clone, Copy)]
pub struct Prompts<'a> {
    pub templates: &'a TemplateSet,
    pub html_budget: usize,
    pub strip_reasoning: bool,
}

impl<'a> Prompts<'a> {
    pub fn new(templates: &'a TemplateSet, html_budget: usize) -> Self {
        Prompts {
            templates,
            html_budget,
            strip_reasoning: false,
        }
    }

    fn simplify(&self, html: &str) -> String {
        simplify_html(html, self.html_budget)
    }

    /// System and user message for the initial planner call.
    pub fn planner(&self, intent: &str, html: &str) -> Result<Vec<ChatMessage>, TemplateError> {
        let t = self.templates;
        Ok(vec![
            ChatMessage::system(t.render(names::PLANNER_SYSTEM, &Slots::new())?),
            ChatMessage::user(t.render(
                names::PLANNER_USER,
                &Slots::new()
                    .set("user_query", intent)
                    .set("initial_html_state", self.simplify(html)),
            )?),
        ])
    }

    /// Executor messages at round `history.len()`: the plan in the system
    /// message, one placeholder/action pair per past round, then the current
    /// html.
    pub fn executor(
        &self,
        intent: &str,
        plan: &Plan,
        history: &[HistoryItem<'_>],
        html: &str,
    ) -> Result<Vec<ChatMessage>, TemplateError> {
        let t = self.templates;
        let shown = if self.strip_reasoning {
            strip_reasoning(plan)
        } else {
            plan.clone()
        };
        let mut messages = vec![ChatMessage::system(t.render(
            names::EXECUTOR_SYSTEM,
            &Slots::new()
                .set("intent", intent)
                .set("global_plan", render_plan_text(&shown)),
        )?)];
        for (i, h) in history.iter().enumerate() {
            messages.push(ChatMessage::user(t.render(
                names::EXECUTOR_ROUND,
                &Slots::new()
                    .set("round", i.to_string())
                    .set("html", HTML_PLACEHOLDER),
            )?));
            messages.push(ChatMessage::assistant(action_text(h.action)));
        }
        messages.push(ChatMessage::user(t.render(
            names::EXECUTOR_ROUND,
            &Slots::new()
                .set("round", history.len().to_string())
                .set("html", self.simplify(html)),
        )?));
        Ok(messages)
    }

    /// Replanner messages after `history.len()` completed rounds.
    ///
    /// Each past round becomes a user message with placeholders followed by
    /// the plan produced in that round; the final user message carries the
    /// actions so far and the current html.
    pub fn replanner(
        &self,
        intent: &str,
        history: &[HistoryItem<'_>],
        html: &str,
    ) -> Result<Vec<ChatMessage>, TemplateError> {
        let t = self.templates;
        let mut messages = vec![ChatMessage::system(t.render(names::REPLANNER_SYSTEM, &Slots::new())?)];
        let previous = t.render(names::REPLANNER_PREVIOUS, &Slots::new())?;
        for h in history {
            messages.push(ChatMessage::user(previous.clone()));
            messages.push(ChatMessage::assistant(render_plan_text(h.plan)));
        }
        let actions: Vec<Action> = history.iter().map(|h| h.action.clone()).collect();
        messages.push(ChatMessage::user(t.render(
            names::REPLANNER_CURRENT,
            &Slots::new()
                .set("user_query", intent)
                .set("previous_actions", render_numbered_actions(&actions, 0))
                .set("obs", self.simplify(html)),
        )?));
        Ok(messages)
    }
}

/// Messages for the initial planner call.
pub fn planner_messages(
    cfg: &AgentConfig,
    task: &TaskSpec,
    obs: &Observation,
) -> Result<Vec<ChatMessage>, TemplateError> {
    cfg.prompts().planner(&task.intent, &obs.html)
}

pub fn plan_initial(
    cfg: &AgentConfig,
    task: &TaskSpec,
    obs: &Observation,
) -> Result<PlanOutput, RuntimeError> {
    if obs.terminal {
        return Err(RuntimeError::Precondition("observation is terminal".into()));
    }
    let messages = planner_messages(cfg, task, obs)?;
    ask_plan(cfg, &cfg.planner, messages)
}

fn ask_plan(
    cfg: &AgentConfig,
    binding: &ModelBinding,
    messages: Vec<ChatMessage>,
) -> Result<PlanOutput, RuntimeError> {
    let cot = cfg.cot;
    match ask_with_retries(
        binding,
        &cfg.templates,
        messages,
        cfg.parse_retries,
        names::PLAN_FORMAT_REMINDER,
        |text| parse_plan_output(text, cot),
    ) {
        Ok(((plan, preamble), raw)) => Ok(PlanOutput { plan, raw, preamble }),
        Err((_, _, Some(e))) => Err(e),
        Err((attempts, Some(error), None)) => Err(RuntimeError::PlanParse { attempts, error }),
        Err((_, None, None)) => unreachable!("failure carries an error"),
    }
}

/// Messages for the executor at round `history.len()`.
pub fn executor_messages(
    cfg: &AgentConfig,
    task: &TaskSpec,
    plan: &Plan,
    history: &[HistoryItem<'_>],
    obs: &Observation,
) -> Result<Vec<ChatMessage>, TemplateError> {
    cfg.prompts().executor(&task.intent, plan, history, &obs.html)
}

pub fn execute_step(
    cfg: &AgentConfig,
    task: &TaskSpec,
    plan: &Plan,
    history: &[HistoryItem<'_>],
    obs: &Observation,
) -> Result<ActionOutput, RuntimeError> {
    if obs.terminal {
        return Err(RuntimeError::Precondition("observation is terminal".into()));
    }
    let messages = executor_messages(cfg, task, plan, history, obs)?;
    let cot = cfg.cot;
    match ask_with_retries(
        &cfg.executor,
        &cfg.templates,
        messages,
        cfg.parse_retries,
        names::ACTION_FORMAT_REMINDER,
        |text| parse_action_output(text, cot),
    ) {
        Ok(((action, preamble), raw)) => Ok(ActionOutput {
            action,
            raw,
            preamble,
        }),
        Err((_, _, Some(e))) => Err(e),
        Err((attempts, Some(error), None)) => Err(RuntimeError::ActionParse { attempts, error }),
        Err((_, None, None)) => unreachable!("failure carries an error"),
    }
}

/// Messages for a replanning call after `history.len()` completed rounds.
pub fn replanner_messages(
    cfg: &AgentConfig,
    task: &TaskSpec,
    history: &[HistoryItem<'_>],
    obs: &Observation,
) -> Result<Vec<ChatMessage>, TemplateError> {
    cfg.prompts().replanner(&task.intent, history, &obs.html)
}

pub fn replan(
    cfg: &AgentConfig,
    task: &TaskSpec,
    history: &[HistoryItem<'_>],
    obs: &Observation,
) -> Result<PlanOutput, RuntimeError> {
    if cfg.planning_mode != PlanningMode::Dynamic {
        return Err(RuntimeError::Precondition("replanning requires dynamic mode".into()));
    }
    if history.is_empty() {
        return Err(RuntimeError::Precondition("replanning needs at least one completed round".into()));
    }
    if obs.terminal {
        return Err(RuntimeError::Precondition("observation is terminal".into()));
    }
    let messages = replanner_messages(cfg, task, history, obs)?;
    ask_plan(cfg, &cfg.replanner, messages)
}

fn failure_outcome(e: &RuntimeError) -> Outcome {
    match e {
        RuntimeError::PlanParse { .. } | RuntimeError::ActionParse { .. } => Outcome::ParseFailure,
        _ => Outcome::Failure,
    }
}

/// Runs one task to completion. Errors end the episode with a matching
/// outcome and reason instead of propagating.
pub fn run_episode(cfg: &AgentConfig, task: &TaskSpec, env: &mut dyn Environment) -> Episode {
    let span = tracing::info_span!("episode", task = %task.id);
    let _guard = span.enter();
    if let Err(e) = cfg.validate().and_then(|_| task.validate()) {
        return Episode::new(task.clone(), Vec::new(), Outcome::Failure).with_reason(e);
    }
    let mut obs = match env.reset(task) {
        Ok(o) => o,
        Err(e) => {
            return Episode::new(task.clone(), Vec::new(), Outcome::Failure).with_reason(e.to_string())
        }
    };
    let mut rounds: Vec<Round> = Vec::new();
    let finish = |rounds: Vec<Round>, outcome: Outcome, reason: Option<String>| {
        let ep = Episode::new(task.clone(), rounds, outcome);
        match reason {
            Some(r) => ep.with_reason(r),
            None => ep,
        }
    };

    for t in 0..cfg.step_budget {
        let history: Vec<HistoryItem<'_>> = rounds
            .iter()
            .map(|r| HistoryItem {
                plan: &r.plan,
                action: &r.action,
            })
            .collect();
        let planned = if t == 0 {
            plan_initial(cfg, task, &obs).map(Some)
        } else if cfg.planning_mode == PlanningMode::Dynamic {
            replan(cfg, task, &history, &obs).map(Some)
        } else {
            Ok(None)
        };
        let (plan, raw_planner_output, planner_preamble) = match planned {
            Ok(Some(p)) => (p.plan, p.raw, p.preamble),
            Ok(None) => (rounds[t - 1].plan.clone(), String::new(), None),
            Err(e) => {
                drop(history);
                return finish(rounds, failure_outcome(&e), Some(format!("round {t}: {e}")));
            }
        };
        let executed = execute_step(cfg, task, &plan, &history, &obs);
        drop(history);
        let out = match executed {
            Ok(o) => o,
            Err(e) => return finish(rounds, failure_outcome(&e), Some(format!("round {t}: {e}"))),
        };
        tracing::debug!(round = t, action = %render_call(&out.action), "executor action");
        rounds.push(Round {
            observation: obs.clone(),
            plan,
            action: out.action.clone(),
            raw_planner_output,
            raw_executor_output: out.raw,
            planner_preamble,
            executor_preamble: out.preamble,
        });
        match env.step(&out.action) {
            Ok(next) if next.terminal => {
                let outcome = if env.success() == Some(true) {
                    Outcome::Success
                } else {
                    Outcome::Failure
                };
                return finish(rounds, outcome, None);
            }
            Ok(next) => obs = next,
            Err(e @ EnvError::Divergence { .. }) => {
                return finish(rounds, Outcome::Divergence, Some(e.to_string()))
            }
            Err(e) => return finish(rounds, Outcome::Failure, Some(e.to_string())),
        }
    }
    finish(
        rounds,
        Outcome::BudgetExhausted,
        Some(format!("step budget of {} exhausted", cfg.step_budget)),
    )
}

/// Runs every task on a fresh environment, at most `workers` at a time.
/// Output order matches `tasks`; a task whose environment cannot be created
/// yields a Failure episode with the reason.
pub fn run_tasks(
    cfg: &AgentConfig,
    tasks: &[TaskSpec],
    factory: &dyn EnvFactory,
    workers: usize,
) -> Vec<Episode> {
    par_map(tasks, workers, |task| match factory.create(task) {
        Ok(mut env) => run_episode(cfg, task, env.as_mut()),
        Err(e) => Episode::new(task.clone(), Vec::new(), Outcome::Failure)
            .with_reason(format!("environment: {e}")),
    })
}

/// Path of an episode file inside a run directory.
pub fn episode_path(run_dir: &Path, task_id: &str) -> PathBuf {
    run_dir.join(format!("{task_id}.json"))
}

pub fn episode_to_json(episode: &Episode) -> String {
    let mut s = serde_json::to_string_pretty(episode).expect("episode serializes");
    s.push('\n');
    s
}

pub fn write_episode(run_dir: &Path, episode: &Episode) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(run_dir)?;
    let path = episode_path(run_dir, &episode.task.id);
    std::fs::write(&path, episode_to_json(episode))?;
    Ok(path)
}

pub fn read_episode(path: &Path) -> std::io::Result<Episode> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
