use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("missing slot `{0}`")]
    MissingSlot(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("cannot read template `{name}`: {message}")]
    Io { name: String, message: String },
}

/// Template names shipped under `prompts/v1/`.
pub mod names {
    pub const PLANNER_SYSTEM: &str = "planner_system";
    pub const PLANNER_USER: &str = "planner_user";
    pub const EXECUTOR_SYSTEM: &str = "executor_system";
    pub const EXECUTOR_ROUND: &str = "executor_round";
    pub const ANNOTATOR_SYSTEM: &str = "annotator_system";
    pub const ANNOTATOR_USER: &str = "annotator_user";
    pub const ANNOTATOR_EXAMPLES: &str = "annotator_examples";
    pub const EXPANSION_SYSTEM: &str = "expansion_system";
    pub const EXPANSION_USER: &str = "expansion_user";
    pub const CLASSIFIER_SYSTEM: &str = "classifier_system";
    pub const CLASSIFIER_USER: &str = "classifier_user";
    pub const TARGETED_EXPANSION: &str = "targeted_expansion";
    pub const REPLAN_ANNOTATOR_SYSTEM: &str = "replan_annotator_system";
    pub const REPLAN_ANNOTATOR_PREVIOUS: &str = "replan_annotator_previous";
    pub const REPLAN_ANNOTATOR_CURRENT: &str = "replan_annotator_current";
    pub const REPLAN_ANNOTATOR_EXAMPLES: &str = "replan_annotator_examples";
    pub const REPLANNER_SYSTEM: &str = "replanner_system";
    pub const REPLANNER_PREVIOUS: &str = "replanner_previous";
    pub const REPLANNER_CURRENT: &str = "replanner_current";
    pub const QUERY_GENERATOR_SYSTEM: &str = "query_generator_system";
    pub const QUERY_GENERATOR_USER: &str = "query_generator_user";
    pub const FEASIBILITY_JUDGE: &str = "feasibility_judge";
    pub const ORM_JUDGE: &str = "orm_judge";
    pub const COT_ANNOTATOR_SYSTEM: &str = "cot_annotator_system";
    pub const COT_ANNOTATOR_USER: &str = "cot_annotator_user";
    pub const PLAN_FORMAT_REMINDER: &str = "plan_format_reminder";
    pub const ACTION_FORMAT_REMINDER: &str = "action_format_reminder";
    pub const GROUNDING_CORRECTION: &str = "grounding_correction";
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../prompts/v1/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin![
    "planner_system",
    "planner_user",
    "executor_system",
    "executor_round",
    "annotator_system",
    "annotator_user",
    "annotator_examples",
    "expansion_system",
    "expansion_user",
    "classifier_system",
    "classifier_user",
    "targeted_expansion",
    "replan_annotator_system",
    "replan_annotator_previous",
    "replan_annotator_current",
    "replan_annotator_examples",
    "replanner_system",
    "replanner_previous",
    "replanner_current",
    "query_generator_system",
    "query_generator_user",
    "feasibility_judge",
    "orm_judge",
    "cot_annotator_system",
    "cot_annotator_user",
    "plan_format_reminder",
    "action_format_reminder",
    "grounding_correction",
];

/// Version tag of the shipped template set.
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// Text with `{slot}` placeholders. `{{` and `}}` produce literal braces;
/// a brace that does not enclose an identifier is literal text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_slots: BTreeSet<String>,
    pieces: Vec<Piece>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn tokenize(body: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(i) = rest.find(['{', '}']) {
        text.push_str(&rest[..i]);
        rest = &rest[i..];
        if rest.starts_with("{{") {
            text.push('{');
            rest = &rest[2..];
        } else if rest.starts_with("}}") {
            text.push('}');
            rest = &rest[2..];
        } else if rest.starts_with('{') {
            match rest[1..].find('}') {
                Some(end) if is_ident(&rest[1..1 + end]) => {
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(rest[1..1 + end].to_string()));
                    rest = &rest[end + 2..];
                }
                _ => {
                    text.push('{');
                    rest = &rest[1..];
                }
            }
        } else {
            text.push('}');
            rest = &rest[1..];
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

/// Slot values for rendering.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slots(BTreeMap<String, String>);

impl Slots {
    pub fn new() -> Self {
        Slots::default()
    }

    pub fn set(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        // Files end with a newline; rendered messages do not carry it.
        let pieces = tokenize(body.strip_suffix('\n').unwrap_or(&body));
        let required_slots = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.clone()),
                Piece::Text(_) => None,
            })
            .collect();
        PromptTemplate {
            name: name.into(),
            body,
            required_slots,
            pieces,
        }
    }

    /// Substitutes every slot in a single pass; values are inserted verbatim.
    pub fn render(&self, slots: &Slots) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(
                    slots
                        .get(s)
                        .ok_or_else(|| TemplateError::MissingSlot(s.clone()))?,
                ),
            }
        }
        Ok(out)
    }
}

/// A named collection of templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

impl TemplateSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        TemplateSet {
            templates: BUILTIN
                .iter()
                .map(|(n, b)| (n.to_string(), PromptTemplate::new(*n, *b)))
                .collect(),
        }
    }

    /// Builtins overridden by any `<name>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Io {
            name: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                name: name.to_string(),
                message: e.to_string(),
            })?;
            set.insert(PromptTemplate::new(name, body));
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    pub fn render(&self, name: &str, slots: &Slots) -> Result<String, TemplateError> {
        self.get(name)?.render(slots)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_slot_template_is_unchanged() {
        let t = PromptTemplate::new("t", "no slots here");
        assert!(t.required_slots.is_empty());
        assert_eq!(t.render(&Slots::new()).unwrap(), "no slots here");
    }

    #[test]
    fn missing_slot() {
        let set = TemplateSet::builtin();
        let err = set
            .render(names::EXECUTOR_SYSTEM, &Slots::new().set("intent", "x"))
            .unwrap_err();
        assert_eq!(err, TemplateError::MissingSlot("global_plan".into()));
    }

    #[test]
    fn escapes_and_stray_braces() {
        let t = PromptTemplate::new("t", "## Data Pair {{i}} {n} {not a slot} }");
        assert_eq!(
            t.required_slots.iter().collect::<Vec<_>>(),
            vec!["n"]
        );
        assert_eq!(
            t.render(&Slots::new().set("n", "{x}")).unwrap(),
            "## Data Pair {i} {x} {not a slot} }"
        );
    }

    #[test]
    fn executor_template_contains_intent_and_plan() {
        let set = TemplateSet::builtin();
        let intent = "Create a shipping report from 08/05/2022 to 03/01/2023";
        let plan = "## Step 1\nReasoning: r\nStep: Navigate to the 'Reports' section.";
        let text = set
            .render(
                names::EXECUTOR_SYSTEM,
                &Slots::new().set("intent", intent).set("global_plan", plan),
            )
            .unwrap();
        assert!(text.contains(&format!("# Task Instruction: {intent}")));
        assert!(text.contains(plan));
    }

    #[test]
    fn every_builtin_renders_with_its_slots() {
        let set = TemplateSet::builtin();
        assert_eq!(set.names().count(), BUILTIN.len());
        for name in set.names() {
            let t = set.get(name).unwrap();
            let slots = t
                .required_slots
                .iter()
                .fold(Slots::new(), |s, n| s.set(n, "VALUE"));
            let out = t.render(&slots).unwrap();
            for slot in &t.required_slots {
                assert!(!out.contains(&format!("{{{slot}}}")), "{name}: {slot}");
            }
        }
    }

    #[test]
    fn overrides_replace_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("planner_user.txt"), "Q: {user_query}\n").unwrap();
        let set = TemplateSet::with_overrides(dir.path()).unwrap();
        assert_eq!(
            set.render(names::PLANNER_USER, &Slots::new().set("user_query", "x"))
                .unwrap(),
            "Q: x"
        );
        assert!(set.get(names::PLANNER_SYSTEM).is_ok());
    }
}
