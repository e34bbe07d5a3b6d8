//! Domain types shared by the runtime, the data factory and the harness.
//!
//! Everything here is a plain value: cloneable, comparable and `Send + Sync`.
//! Validation is total and reports every violation instead of stopping at the
//! first one.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Website label of a task. `Custom` covers anything outside the benchmark sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Website {
    Gitlab,
    Reddit,
    ShoppingAdmin,
    Shopping,
    Map,
    Multi,
    Custom,
}

impl Website {
    pub const ALL: [Website; 7] = [
        Website::Gitlab,
        Website::Reddit,
        Website::ShoppingAdmin,
        Website::Shopping,
        Website::Map,
        Website::Multi,
        Website::Custom,
    ];

    /// Snake-case label used in file paths and prompts.
    pub fn as_str(self) -> &'static str {
        match self {
            Website::Gitlab => "gitlab",
            Website::Reddit => "reddit",
            Website::ShoppingAdmin => "shopping_admin",
            Website::Shopping => "shopping",
            Website::Map => "map",
            Website::Multi => "multi",
            Website::Custom => "custom",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Website::Gitlab => "GitLab",
            Website::Reddit => "Reddit",
            Website::ShoppingAdmin => "Shopping Admin",
            Website::Shopping => "Shopping",
            Website::Map => "Map",
            Website::Multi => "Multiple Websites",
            Website::Custom => "Custom",
        }
    }
}

impl fmt::Display for Website {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Website {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Website::ALL
            .iter()
            .copied()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| format!("unknown website label `{s}`"))
    }
}

/// Where an environment for a task comes from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskEntry {
    /// A replay fixture, addressed by path or by task id inside a fixture library.
    Fixture { path: String },
    /// A live adapter endpoint (`tcp://host:port` or `exec:<command line>`).
    Adapter { endpoint: String },
    /// Resolved by the environment factory from the task id alone.
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub website: Website,
    pub intent: String,
    #[serde(default)]
    pub entry: TaskEntry,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, website: Website, intent: impl Into<String>) -> Self {
        TaskSpec {
            id: id.into(),
            website,
            intent: intent.into(),
            entry: TaskEntry::None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.intent.trim().is_empty() {
            return Err(format!("task `{}` has an empty intent", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Click,
    Type,
    Search,
    Hover,
    ScrollDown,
    ScrollUp,
    SelectDropdownOption,
    Exit,
    /// A kind name the executor emitted that is not part of the vocabulary.
    Unknown(String),
}

impl ActionKind {
    pub const KNOWN: [ActionKind; 8] = [
        ActionKind::Click,
        ActionKind::Type,
        ActionKind::Search,
        ActionKind::Hover,
        ActionKind::ScrollDown,
        ActionKind::ScrollUp,
        ActionKind::SelectDropdownOption,
        ActionKind::Exit,
    ];

    /// Name as written in the `action="..."` argument of a `do(...)` call.
    pub fn dsl_name(&self) -> &str {
        match self {
            ActionKind::Click => "Click",
            ActionKind::Type => "Type",
            ActionKind::Search => "Search",
            ActionKind::Hover => "Hover",
            ActionKind::ScrollDown => "Scroll Down",
            ActionKind::ScrollUp => "Scroll Up",
            ActionKind::SelectDropdownOption => "Select Dropdown Option",
            ActionKind::Exit => "Exit",
            ActionKind::Unknown(raw) => raw,
        }
    }

    /// Case-sensitive lookup; anything else becomes `Unknown`.
    pub fn from_dsl_name(name: &str) -> ActionKind {
        match name {
            "Click" => ActionKind::Click,
            "Type" => ActionKind::Type,
            "Search" => ActionKind::Search,
            "Hover" => ActionKind::Hover,
            "Scroll Down" => ActionKind::ScrollDown,
            "Scroll Up" => ActionKind::ScrollUp,
            "Select Dropdown Option" => ActionKind::SelectDropdownOption,
            other => ActionKind::Unknown(other.to_string()),
        }
    }

    fn field_rules(&self) -> Option<(Requirement, Requirement)> {
        use Requirement::*;
        match self {
            ActionKind::Click | ActionKind::Hover => Some((Required, Forbidden)),
            ActionKind::Type | ActionKind::Search | ActionKind::SelectDropdownOption => {
                Some((Required, Required))
            }
            ActionKind::ScrollDown | ActionKind::ScrollUp => Some((Forbidden, Forbidden)),
            ActionKind::Exit => Some((Forbidden, Required)),
            ActionKind::Unknown(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Requirement {
    Required,
    Forbidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommentTag {
    Element,
    Note,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Comment {
    pub tag: CommentTag,
    pub text: String,
}

impl Comment {
    pub fn element(text: impl Into<String>) -> Self {
        Comment {
            tag: CommentTag::Element,
            text: text.into(),
        }
    }

    pub fn note(text: impl Into<String>) -> Self {
        Comment {
            tag: CommentTag::Note,
            text: text.into(),
        }
    }

    pub fn plain(text: impl Into<String>) -> Self {
        Comment {
            tag: CommentTag::Plain,
            text: text.into(),
        }
    }
}

/// One grounded web interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comments: Vec<Comment>,
}

impl Action {
    pub fn new(kind: ActionKind) -> Self {
        Action {
            kind,
            element: None,
            argument: None,
            comments: Vec::new(),
        }
    }

    pub fn click(element: impl Into<String>) -> Self {
        Action::new(ActionKind::Click).on(element)
    }

    pub fn type_text(element: impl Into<String>, text: impl Into<String>) -> Self {
        Action::new(ActionKind::Type).on(element).with_argument(text)
    }

    pub fn search(element: impl Into<String>, query: impl Into<String>) -> Self {
        Action::new(ActionKind::Search).on(element).with_argument(query)
    }

    pub fn scroll_down() -> Self {
        Action::new(ActionKind::ScrollDown)
    }

    pub fn exit(message: impl Into<String>) -> Self {
        Action::new(ActionKind::Exit).with_argument(message)
    }

    pub fn on(mut self, element: impl Into<String>) -> Self {
        self.element = Some(element.into());
        self
    }

    pub fn with_argument(mut self, argument: impl Into<String>) -> Self {
        self.argument = Some(argument.into());
        self
    }

    pub fn with_comment(mut self, comment: Comment) -> Self {
        self.comments.push(comment);
        self
    }

    pub fn is_exit(&self) -> bool {
        self.kind == ActionKind::Exit
    }

    /// The exit message, if this is an exit.
    pub fn exit_message(&self) -> Option<&str> {
        if self.is_exit() {
            self.argument.as_deref()
        } else {
            None
        }
    }

    /// Same action without its leading comments.
    pub fn without_comments(&self) -> Action {
        Action {
            comments: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingElement(String),
    ForbiddenElement(String),
    MissingArgument(String),
    ForbiddenArgument(String),
    UnknownKind(String),
    EmptyTrajectory,
    ExitNotLast { index: usize },
    MultipleExits,
    InvalidAction { index: usize, violation: Box<Violation> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingElement(k) => write!(f, "{k} requires element"),
            Violation::ForbiddenElement(k) => write!(f, "{k} forbids element"),
            Violation::MissingArgument(k) => write!(f, "{k} requires argument"),
            Violation::ForbiddenArgument(k) => write!(f, "{k} forbids argument"),
            Violation::UnknownKind(k) => write!(f, "unknown action kind `{k}`"),
            Violation::EmptyTrajectory => f.write_str("empty"),
            Violation::ExitNotLast { index } => write!(f, "Exit not last (index {index})"),
            Violation::MultipleExits => f.write_str("more than one Exit"),
            Violation::InvalidAction { index, violation } => {
                write!(f, "action {index}: {violation}")
            }
        }
    }
}

/// Outcome of a validation pass. `ok` iff `violations` is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            f.write_str("ok")
        } else {
            f.write_str(&self.messages().join("; "))
        }
    }
}

pub fn validate_action(action: &Action) -> ValidityReport {
    let mut violations = Vec::new();
    let name = action.kind.dsl_name().to_string();
    match action.kind.field_rules() {
        None => violations.push(Violation::UnknownKind(name)),
        Some((element_rule, argument_rule)) => {
            match (element_rule, action.element.is_some()) {
                (Requirement::Required, false) => {
                    violations.push(Violation::MissingElement(name.clone()))
                }
                (Requirement::Forbidden, true) => {
                    violations.push(Violation::ForbiddenElement(name.clone()))
                }
                _ => {}
            }
            match (argument_rule, action.argument.is_some()) {
                (Requirement::Required, false) => violations.push(Violation::MissingArgument(name)),
                (Requirement::Forbidden, true) => {
                    violations.push(Violation::ForbiddenArgument(name))
                }
                _ => {}
            }
        }
    }
    ValidityReport { violations }
}

/// Ordered actions, addressed by 0-based index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn new(actions: Vec<Action>) -> Self {
        Trajectory { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Action> {
        self.actions.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Action> {
        self.actions.iter()
    }
}

impl FromIterator<Action> for Trajectory {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        Trajectory {
            actions: iter.into_iter().collect(),
        }
    }
}

pub fn validate_trajectory(trajectory: &Trajectory) -> ValidityReport {
    let mut violations = Vec::new();
    if trajectory.is_empty() {
        violations.push(Violation::EmptyTrajectory);
        return ValidityReport { violations };
    }
    for (index, action) in trajectory.iter().enumerate() {
        for v in validate_action(action).violations {
            violations.push(Violation::InvalidAction {
                index,
                violation: Box::new(v),
            });
        }
    }
    let exits: Vec<usize> = trajectory
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_exit())
        .map(|(i, _)| i)
        .collect();
    if exits.len() > 1 {
        violations.push(Violation::MultipleExits);
    }
    let last = trajectory.len() - 1;
    for &i in &exits {
        if i != last {
            violations.push(Violation::ExitNotLast { index: i });
        }
    }
    ValidityReport { violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub number: usize,
    pub reasoning: String,
    pub step: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_indices: Option<Vec<usize>>,
}

impl PlanStep {
    pub fn new(number: usize, reasoning: impl Into<String>, step: impl Into<String>) -> Self {
        PlanStep {
            number,
            reasoning: reasoning.into(),
            step: step.into(),
            description: None,
            action_indices: None,
        }
    }
}

/// A numbered plan. Steps are numbered exactly `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn new(steps: Vec<PlanStep>) -> Self {
        Plan { steps }
    }

    /// Builds a plan from `(reasoning, step)` pairs, numbering from 1.
    pub fn from_pairs<R, S>(pairs: impl IntoIterator<Item = (R, S)>) -> Self
    where
        R: Into<String>,
        S: Into<String>,
    {
        Plan {
            steps: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (r, s))| PlanStep::new(i + 1, r, s))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_grounded(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.action_indices.is_some())
    }

    /// Structural checks: numbering, nonempty fields, increasing index lists.
    pub fn validate(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("plan has no steps".into());
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.number != i + 1 {
                return Err(format!(
                    "step at position {} is numbered {}",
                    i + 1,
                    step.number
                ));
            }
            if step.reasoning.trim().is_empty() {
                return Err(format!("step {} has empty reasoning", step.number));
            }
            if step.step.trim().is_empty() {
                return Err(format!("step {} has empty step text", step.number));
            }
            if let Some(indices) = &step.action_indices {
                if indices.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(format!(
                        "step {} action indices are not strictly increasing",
                        step.number
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Extracts the values of `id="..."` / `id='...'` attributes from markup, in
/// document order of first appearance.
pub fn extract_element_ids(html: &str) -> BTreeSet<String> {
    static_regex()
        .captures_iter(html)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)).map(|m| m.as_str().to_string()))
        .filter(|id| !id.is_empty())
        .collect()
}

fn static_regex() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(r#"<[A-Za-z][^<>]*?\sid\s*=\s*(?:"([^"]*)"|'([^']*)')"#)
            .expect("static regex")
    })
}

/// Snapshot of the environment as the agent sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub html: String,
    pub element_ids: BTreeSet<String>,
    pub terminal: bool,
}

impl Observation {
    pub fn new(html: impl Into<String>, terminal: bool) -> Self {
        let html = html.into();
        let element_ids = extract_element_ids(&html);
        Observation {
            html,
            element_ids,
            terminal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
    BudgetExhausted,
    ParseFailure,
    Divergence,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::BudgetExhausted => "budget_exhausted",
            Outcome::ParseFailure => "parse_failure",
            Outcome::Divergence => "divergence",
        };
        f.write_str(s)
    }
}

/// One planner/executor round of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub observation: Observation,
    pub plan: Plan,
    pub action: Action,
    /// Empty when the plan was reused (static planning).
    pub raw_planner_output: String,
    pub raw_executor_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_preamble: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executor_preamble: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub task: TaskSpec,
    pub rounds: Vec<Round>,
    pub outcome: Outcome,
    pub success_score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

impl Episode {
    pub fn new(task: TaskSpec, rounds: Vec<Round>, outcome: Outcome) -> Self {
        Episode {
            task,
            rounds,
            success_score: u8::from(outcome == Outcome::Success),
            outcome,
            failure_reason: None,
        }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.failure_reason = Some(reason.into());
        self
    }

    pub fn trajectory(&self) -> Trajectory {
        self.rounds.iter().map(|r| r.action.clone()).collect()
    }

    /// Executor actions taken, the final exit included.
    pub fn steps(&self) -> usize {
        self.rounds.len()
    }

    pub fn final_message(&self) -> Option<&str> {
        self.rounds.last().and_then(|r| r.action.exit_message())
    }

    pub fn validate(&self) -> Result<(), String> {
        if (self.success_score == 1) != (self.outcome == Outcome::Success) || self.success_score > 1
        {
            return Err("success_score disagrees with outcome".into());
        }
        if self.rounds.is_empty()
            && self.outcome != Outcome::ParseFailure
            && self.failure_reason.is_none()
        {
            return Err("episode without rounds must be a parse failure or carry a reason".into());
        }
        Ok(())
    }
}
