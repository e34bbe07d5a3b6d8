use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, Environment};
use crate::domain::{extract_element_ids, Action, ActionKind, Observation, TaskSpec};
use crate::dsl::render_call;

/// How a matcher compares the action's argument.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgumentMode {
    #[default]
    Exact,
    /// Case-insensitive, surrounding whitespace ignored.
    NormalizedCase,
    Any,
}

/// Predicate over actions. Absent `element` or `argument` match anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMatcher {
    /// DSL kind name, e.g. `"Click"` or `"Scroll Down"`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument: Option<String>,
    #[serde(default, skip_serializing_if = "is_default_mode")]
    pub argument_mode: ArgumentMode,
}

fn is_default_mode(m: &ArgumentMode) -> bool {
    *m == ArgumentMode::Exact
}

/// Environment-wide matching policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Elements and exact-mode arguments must be identical.
    #[default]
    Strict,
    /// Elements and arguments are compared case-insensitively after trimming.
    Lenient,
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

impl ActionMatcher {
    pub fn new(kind: &ActionKind) -> Self {
        ActionMatcher {
            kind: kind.dsl_name().to_string(),
            element: None,
            argument: None,
            argument_mode: ArgumentMode::Exact,
        }
    }

    /// Matcher that fires only on `action` itself.
    pub fn exact(action: &Action) -> Self {
        ActionMatcher {
            kind: action.kind.dsl_name().to_string(),
            element: action.element.clone(),
            argument: action.argument.clone(),
            argument_mode: ArgumentMode::Exact,
        }
    }

    pub fn on(mut self, element: impl Into<String>) -> Self {
        self.element = Some(element.into());
        self
    }

    pub fn with_argument(mut self, argument: impl Into<String>, mode: ArgumentMode) -> Self {
        self.argument = Some(argument.into());
        self.argument_mode = mode;
        self
    }

    pub fn matches(&self, action: &Action, mode: MatchMode) -> bool {
        if action.kind.dsl_name() != self.kind {
            return false;
        }
        let same = |want: &str, got: &str| match mode {
            MatchMode::Strict => want == got,
            MatchMode::Lenient => normalize(want) == normalize(got),
        };
        if let Some(el) = &self.element {
            match &action.element {
                Some(got) if same(el, got) => {}
                _ => return false,
            }
        }
        match (&self.argument, self.argument_mode) {
            (None, _) | (_, ArgumentMode::Any) => true,
            (Some(want), ArgumentMode::Exact) => {
                action.argument.as_deref().is_some_and(|got| same(want, got))
            }
            (Some(want), ArgumentMode::NormalizedCase) => action
                .argument
                .as_deref()
                .is_some_and(|got| normalize(want) == normalize(got)),
        }
    }

    /// Whether every action this matcher's successor `later` accepts is
    /// already accepted by `self`, making `later` unreachable.
    fn shadows(&self, later: &ActionMatcher) -> bool {
        if self.kind != later.kind {
            return false;
        }
        if self.element.is_some() && self.element != later.element {
            return false;
        }
        match (&self.argument, self.argument_mode) {
            (None, _) | (_, ArgumentMode::Any) => true,
            (Some(a), ArgumentMode::Exact) => {
                later.argument.as_ref() == Some(a) && later.argument_mode == ArgumentMode::Exact
            }
            (Some(a), ArgumentMode::NormalizedCase) => match (&later.argument, later.argument_mode) {
                (Some(b), ArgumentMode::Exact | ArgumentMode::NormalizedCase) => {
                    normalize(a) == normalize(b)
                }
                _ => false,
            },
        }
    }

    /// An action this matcher accepts, used to build witnesses.
    fn example(&self, html: &str) -> Action {
        let kind = ActionKind::from_dsl_name(&self.kind);
        let mut action = Action::new(kind.clone());
        let needs_element = !matches!(kind, ActionKind::ScrollDown | ActionKind::ScrollUp);
        if needs_element {
            let el = self.element.clone().unwrap_or_else(|| {
                extract_element_ids(html)
                    .into_iter()
                    .next()
                    .unwrap_or_else(|| "0".to_string())
            });
            action.element = Some(el);
        }
        if matches!(
            kind,
            ActionKind::Type | ActionKind::Search | ActionKind::SelectDropdownOption
        ) {
            action.argument = Some(self.argument.clone().unwrap_or_else(|| "x".to_string()));
        }
        action
    }
}

/// Transition target: another state, or the end of the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    State(usize),
    Terminal,
}

impl Serialize for Next {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Next::State(i) => s.serialize_u64(*i as u64),
            Next::Terminal => s.serialize_str("terminal"),
        }
    }
}

impl<'de> Deserialize<'de> for Next {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Next::State(i)),
            Raw::Word(w) if w == "terminal" => Ok(Next::Terminal),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a state index or \"terminal\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "match")]
    pub matcher: ActionMatcher,
    pub next: Next,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureState {
    pub html: String,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

/// Judges the final exit message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum SuccessWhen {
    Exact(String),
    Substring(String),
    Always,
    Never,
}

impl SuccessWhen {
    /// `message` is `None` when the episode ended without an exit.
    pub fn judge(&self, message: Option<&str>, mode: MatchMode) -> bool {
        let eq = |a: &str, b: &str| match mode {
            MatchMode::Strict => a.trim() == b.trim(),
            MatchMode::Lenient => normalize(a) == normalize(b),
        };
        match self {
            SuccessWhen::Always => true,
            SuccessWhen::Never => false,
            SuccessWhen::Exact(want) => message.is_some_and(|m| eq(want, m)),
            SuccessWhen::Substring(want) => message.is_some_and(|m| match mode {
                MatchMode::Strict => m.contains(want.as_str()),
                MatchMode::Lenient => normalize(m).contains(&normalize(want)),
            }),
        }
    }

    fn witness_message(&self) -> Option<String> {
        match self {
            SuccessWhen::Exact(m) | SuccessWhen::Substring(m) => Some(m.clone()),
            SuccessWhen::Always => Some("done".into()),
            SuccessWhen::Never => None,
        }
    }
}

/// A task replayed offline as a small state machine over html pages.
///
/// In each state the first transition whose matcher accepts the action
/// fires. `Exit` is never matched: it ends the episode from any state listed
/// in `exit_states` (all states when the list is absent), and `success_when`
/// judges its message. Exiting elsewhere ends the episode as a failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub task: TaskSpec,
    pub states: Vec<FixtureState>,
    pub success_when: SuccessWhen,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_states: Option<Vec<usize>>,
}

impl ReplayFixture {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
        let fixture: ReplayFixture = serde_json::from_str(&text)
            .map_err(|e| EnvError::InvalidFixture(format!("{}: {e}", path.display())))?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serializes")
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidFixture(format!("{}: {m}", self.task.id)));
        if self.states.is_empty() {
            return bad("no states".into());
        }
        if let Err(e) = self.task.validate() {
            return bad(e);
        }
        let n = self.states.len();
        for (i, state) in self.states.iter().enumerate() {
            for (j, t) in state.transitions.iter().enumerate() {
                let kind = ActionKind::from_dsl_name(&t.matcher.kind);
                if matches!(kind, ActionKind::Unknown(_)) {
                    return bad(format!("state {i} transition {j}: unknown kind `{}`", t.matcher.kind));
                }
                if let Next::State(k) = t.next {
                    if k >= n {
                        return bad(format!("state {i} transition {j}: next state {k} out of range"));
                    }
                }
                if let Some(prev) = state.transitions[..j]
                    .iter()
                    .position(|p| p.matcher.shadows(&t.matcher))
                {
                    return bad(format!(
                        "state {i} transition {j} is unreachable behind transition {prev}"
                    ));
                }
            }
        }
        if let Some(exits) = &self.exit_states {
            if let Some(k) = exits.iter().find(|&&k| k >= n) {
                return bad(format!("exit state {k} out of range"));
            }
        }
        Ok(())
    }

    fn can_exit_in(&self, state: usize) -> bool {
        self.exit_states
            .as_ref()
            .is_none_or(|s| s.contains(&state))
    }

    /// A shortest action sequence that ends the episode successfully, found
    /// by breadth-first search over the transitions.
    pub fn solve(&self) -> Option<Vec<Action>> {
        let n = self.states.len();
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let path_to = |prev: &[Option<(usize, usize)>], mut s: usize| {
            let mut actions = Vec::new();
            while let Some((from, t)) = prev[s] {
                actions.push(self.states[from].transitions[t].matcher.example(&self.states[from].html));
                s = from;
            }
            actions.reverse();
            actions
        };
        while let Some(s) = queue.pop_front() {
            if self.can_exit_in(s) {
                if let Some(msg) = self.success_when.witness_message() {
                    let mut actions = path_to(&prev, s);
                    actions.push(Action::exit(msg));
                    return Some(actions);
                }
            }
            for (ti, t) in self.states[s].transitions.iter().enumerate() {
                match t.next {
                    Next::State(k) if !seen[k] => {
                        seen[k] = true;
                        prev[k] = Some((s, ti));
                        queue.push_back(k);
                    }
                    Next::Terminal if self.success_when.judge(None, MatchMode::Strict) => {
                        let mut actions = path_to(&prev, s);
                        actions.push(t.matcher.example(&self.states[s].html));
                        return Some(actions);
                    }
                    _ => {}
                }
            }
        }
        None
    }
}

/// Environment that replays a [`ReplayFixture`].
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    fixture: ReplayFixture,
    mode: MatchMode,
    state: Option<usize>,
    terminal: bool,
    success: Option<bool>,
}

impl ReplayEnv {
    pub fn new(fixture: ReplayFixture) -> Result<Self, EnvError> {
        fixture.validate()?;
        Ok(ReplayEnv {
            fixture,
            mode: MatchMode::Strict,
            state: None,
            terminal: false,
            success: None,
        })
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn fixture(&self) -> &ReplayFixture {
        &self.fixture
    }

    pub fn current_state(&self) -> Option<usize> {
        self.state
    }

    fn observation(&self, state: usize) -> Observation {
        Observation::new(self.fixture.states[state].html.clone(), self.terminal)
    }
}

impl Environment for ReplayEnv {
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError> {
        if task.id != self.fixture.task.id {
            return Err(EnvError::UnknownTask(task.id.clone()));
        }
        self.state = Some(0);
        self.terminal = false;
        self.success = None;
        Ok(self.observation(0))
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        let state = self.state.ok_or(EnvError::NotReset)?;
        if self.terminal {
            return Err(EnvError::Terminal);
        }
        if action.is_exit() {
            self.terminal = true;
            self.success = Some(
                self.fixture.can_exit_in(state)
                    && self
                        .fixture
                        .success_when
                        .judge(action.exit_message(), self.mode),
            );
            return Ok(self.observation(state));
        }
        let transition = self.fixture.states[state]
            .transitions
            .iter()
            .find(|t| t.matcher.matches(action, self.mode))
            .ok_or_else(|| EnvError::Divergence {
                action: render_call(action),
                state,
            })?;
        match transition.next {
            Next::State(k) => {
                self.state = Some(k);
                Ok(self.observation(k))
            }
            Next::Terminal => {
                self.terminal = true;
                self.success = Some(self.fixture.success_when.judge(None, self.mode));
                Ok(self.observation(state))
            }
        }
    }

    fn observe(&self) -> Result<Observation, EnvError> {
        let state = self.state.ok_or(EnvError::NotReset)?;
        Ok(self.observation(state))
    }

    fn success(&self) -> Option<bool> {
        self.success
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Website;

    fn two_state() -> ReplayFixture {
        ReplayFixture {
            task: TaskSpec::new("t1", Website::Map, "find the thing"),
            states: vec![
                FixtureState {
                    html: r#"<input id="13"><a id="15">dir</a>"#.into(),
                    transitions: vec![Transition {
                        matcher: ActionMatcher::new(&ActionKind::Click).on("15"),
                        next: Next::State(1),
                    }],
                },
                FixtureState {
                    html: r#"<li id="17" data-text="No results found"> No results found </li>"#
                        .into(),
                    transitions: vec![],
                },
            ],
            success_when: SuccessWhen::Exact("It is 0:34.".into()),
            exit_states: Some(vec![1]),
        }
    }

    #[test]
    fn reset_twice_is_identical() {
        let mut env = ReplayEnv::new(two_state()).unwrap();
        let task = env.fixture().task.clone();
        let a = env.reset(&task).unwrap();
        env.step(&Action::click("15")).unwrap();
        let b = env.reset(&task).unwrap();
        assert_eq!(a, b);
        assert!(!a.terminal);
    }

    #[test]
    fn exact_exit_succeeds() {
        let mut env = ReplayEnv::new(two_state()).unwrap();
        let task = env.fixture().task.clone();
        env.reset(&task).unwrap();
        let obs = env.step(&Action::click("15")).unwrap();
        assert!(obs.html.contains("No results found"));
        let obs = env.step(&Action::exit("It is 0:34.")).unwrap();
        assert!(obs.terminal);
        assert_eq!(env.success(), Some(true));
        assert_eq!(env.step(&Action::click("15")), Err(EnvError::Terminal));
    }

    #[test]
    fn exit_outside_exit_states_fails() {
        let mut env = ReplayEnv::new(two_state()).unwrap();
        let task = env.fixture().task.clone();
        env.reset(&task).unwrap();
        env.step(&Action::exit("It is 0:34.")).unwrap();
        assert_eq!(env.success(), Some(false));
    }

    #[test]
    fn unmatched_click_diverges_in_strict_mode() {
        let mut env = ReplayEnv::new(two_state()).unwrap();
        let task = env.fixture().task.clone();
        env.reset(&task).unwrap();
        assert_eq!(
            env.step(&Action::click("99")),
            Err(EnvError::Divergence {
                action: r#"do(action="Click", element="99")"#.into(),
                state: 0
            })
        );
    }

    #[test]
    fn lenient_mode_normalizes() {
        let mut f = two_state();
        f.states[0].transitions[0].matcher = ActionMatcher::new(&ActionKind::Search)
            .on("13")
            .with_argument("Library near CMU", ArgumentMode::Exact);
        let task = f.task.clone();
        let search = Action::search(" 13", "library NEAR cmu ");
        let mut strict = ReplayEnv::new(f.clone()).unwrap();
        strict.reset(&task).unwrap();
        assert!(strict.step(&search).is_err());
        let mut lenient = ReplayEnv::new(f).unwrap().with_mode(MatchMode::Lenient);
        lenient.reset(&task).unwrap();
        assert!(lenient.step(&search).is_ok());
    }

    #[test]
    fn empty_fixture_is_invalid() {
        let mut f = two_state();
        f.states.clear();
        assert!(matches!(ReplayEnv::new(f), Err(EnvError::InvalidFixture(_))));
    }

    #[test]
    fn out_of_range_and_shadowed_transitions_are_invalid() {
        let mut f = two_state();
        f.states[0].transitions[0].next = Next::State(5);
        assert!(f.validate().is_err());

        let mut f = two_state();
        f.states[0].transitions.insert(
            0,
            Transition {
                matcher: ActionMatcher::new(&ActionKind::Click),
                next: Next::State(0),
            },
        );
        assert!(f.validate().is_err());
    }

    #[test]
    fn solver_witness_replays_to_success() {
        let f = two_state();
        let witness = f.solve().unwrap();
        assert_eq!(witness.len(), 2);
        let mut env = ReplayEnv::new(f.clone()).unwrap();
        env.reset(&f.task).unwrap();
        for a in &witness {
            env.step(a).unwrap();
        }
        assert_eq!(env.success(), Some(true));

        let mut never = f;
        never.success_when = SuccessWhen::Never;
        assert!(never.solve().is_none());
    }

    #[test]
    fn next_serializes_as_index_or_word() {
        let t: Transition =
            serde_json::from_str(r#"{"match": {"kind": "Scroll Down"}, "next": "terminal"}"#)
                .unwrap();
        assert_eq!(t.next, Next::Terminal);
        assert_eq!(serde_json::to_string(&Next::State(3)).unwrap(), "3");
        assert!(serde_json::from_str::<Next>(r#""end""#).is_err());
    }
}
