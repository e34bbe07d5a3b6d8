//! The `## Step N` plan grammar, in plain and grounded form, plus the
//! grounding validator that checks a grounded plan partitions a trajectory.
//!
//! See `docs/plan-grammar.md`.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Plan, PlanStep, Trajectory};
use crate::dsl;

/// Text that replaces reasoning when it is hidden from the executor.
pub const REASONING_OMITTED: &str = "[omitted]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanVariant {
    /// `Reasoning` + `Step` per step.
    Plain,
    /// Adds `Description` and `Actions: [..]` per step.
    Grounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    Reasoning,
    Description,
    Step,
    Actions,
}

impl Field {
    fn label(self) -> &'static str {
        match self {
            Field::Reasoning => "Reasoning",
            Field::Description => "Description",
            Field::Step => "Step",
            Field::Actions => "Actions",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("must start with '## Step 1'")]
    MissingHeader,
    #[error("expected '## Step {expected}', found '## Step {found}'")]
    NonConsecutiveSteps { expected: usize, found: usize },
    #[error("step {step} is missing '{field}'")]
    MissingField { step: usize, field: Field },
    #[error("step {step} repeats '{field}'")]
    DuplicateField { step: usize, field: Field },
    #[error("step {step} has a malformed action list: {detail}")]
    MalformedActionList { step: usize, detail: String },
    #[error("step {step} has unexpected text: {line}")]
    UnexpectedText { step: usize, line: String },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^##\s*Step\s+(\d+)\s*:?\s*$").expect("static regex"))
}

fn field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(Reasoning|Description|Step|Actions)\s*:\s?(.*)$").expect("static regex")
    })
}

fn parse_header(line: &str) -> Option<usize> {
    header_re()
        .captures(line.trim())
        .and_then(|c| c[1].parse().ok())
}

#[derive(Default)]
struct RawStep {
    number: usize,
    fields: Vec<(Field, Vec<String>)>,
}

impl RawStep {
    fn take(&self, field: Field) -> Option<String> {
        self.fields.iter().find(|(f, _)| *f == field).map(|(_, lines)| {
            // Blank lines inside a field are dropped.
            lines
                .iter()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join("\n")
        })
    }
}

fn parse_action_list(step: usize, text: &str) -> Result<Vec<usize>, PlanError> {
    let malformed = |detail: &str| PlanError::MalformedActionList {
        step,
        detail: detail.to_string(),
    };
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| malformed("expected a bracketed list"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| malformed(&format!("`{}` is not an index", part.trim())))
        })
        .collect()
}

/// Parses plan text. The text must begin (after whitespace) with `## Step 1`.
///
/// Fields may span several lines; a field runs until the next field label or
/// step header. The plain variant accepts `Description`/`Actions` when present.
pub fn parse_plan(text: &str, variant: PlanVariant) -> Result<Plan, PlanError> {
    let mut lines = text.lines().peekable();
    while lines.peek().is_some_and(|l| l.trim().is_empty()) {
        lines.next();
    }
    match lines.peek().and_then(|l| parse_header(l)) {
        Some(1) => {}
        _ => return Err(PlanError::MissingHeader),
    }

    let mut raw: Vec<RawStep> = Vec::new();
    for line in lines {
        if let Some(n) = parse_header(line) {
            let expected = raw.len() + 1;
            if n != expected {
                return Err(PlanError::NonConsecutiveSteps { expected, found: n });
            }
            raw.push(RawStep {
                number: n,
                fields: Vec::new(),
            });
            continue;
        }
        let current = raw.last_mut().expect("header seen");
        if let Some(c) = field_re().captures(line.trim_start()) {
            let field = match &c[1] {
                "Reasoning" => Field::Reasoning,
                "Description" => Field::Description,
                "Step" => Field::Step,
                _ => Field::Actions,
            };
            if current.fields.iter().any(|(f, _)| *f == field) {
                return Err(PlanError::DuplicateField {
                    step: current.number,
                    field,
                });
            }
            current.fields.push((field, vec![c[2].to_string()]));
        } else if let Some((_, body)) = current.fields.last_mut() {
            body.push(line.to_string());
        } else if !line.trim().is_empty() {
            return Err(PlanError::UnexpectedText {
                step: current.number,
                line: line.trim().to_string(),
            });
        }
    }

    let mut steps = Vec::with_capacity(raw.len());
    for r in &raw {
        let required = |field: Field| {
            r.take(field)
                .filter(|s| !s.is_empty())
                .ok_or(PlanError::MissingField {
                    step: r.number,
                    field,
                })
        };
        let reasoning = required(Field::Reasoning)?;
        let step = required(Field::Step)?;
        let (description, action_indices) = match variant {
            PlanVariant::Grounded => {
                let d = required(Field::Description)?;
                let a = required(Field::Actions)?;
                (Some(d), Some(parse_action_list(r.number, &a)?))
            }
            PlanVariant::Plain => {
                let d = r.take(Field::Description).filter(|s| !s.is_empty());
                let a = match r.take(Field::Actions) {
                    Some(a) if !a.is_empty() => Some(parse_action_list(r.number, &a)?),
                    _ => None,
                };
                (d, a)
            }
        };
        steps.push(PlanStep {
            number: r.number,
            reasoning,
            step,
            description,
            action_indices,
        });
    }
    Ok(Plan { steps })
}

/// Splits text into an optional free-form preamble and the plan that starts
/// at the first `## Step 1` header.
pub fn split_plan_preamble(text: &str) -> Option<(String, &str)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if parse_header(line) == Some(1) {
            return Some((text[..offset].trim().to_string(), &text[offset..]));
        }
        offset += line.len();
    }
    None
}

fn field_text_ok(text: &str) -> bool {
    !text.trim().is_empty()
        && text.lines().all(|l| {
            l == l.trim() && !field_re().is_match(l) && parse_header(l).is_none()
        })
        && !text.lines().any(|l| l.is_empty())
}

/// Renders a plan. Fields appear in the order Reasoning, Description, Step,
/// Actions; steps are separated by a blank line.
pub fn render_plan(plan: &Plan, variant: PlanVariant) -> Result<String, PlanError> {
    plan.validate().map_err(PlanError::InvalidPlan)?;
    let mut blocks = Vec::with_capacity(plan.steps.len());
    for s in &plan.steps {
        for (name, text) in [("reasoning", &s.reasoning), ("step", &s.step)] {
            if !field_text_ok(text) {
                return Err(PlanError::InvalidPlan(format!(
                    "step {} {name} text cannot be represented",
                    s.number
                )));
            }
        }
        let mut block = format!("## Step {}\nReasoning: {}\n", s.number, s.reasoning);
        if variant == PlanVariant::Grounded {
            let description = s.description.as_ref().ok_or(PlanError::MissingField {
                step: s.number,
                field: Field::Description,
            })?;
            if !field_text_ok(description) {
                return Err(PlanError::InvalidPlan(format!(
                    "step {} description cannot be represented",
                    s.number
                )));
            }
            let indices = s.action_indices.as_ref().ok_or(PlanError::MissingField {
                step: s.number,
                field: Field::Actions,
            })?;
            block.push_str(&format!("Description: {description}\n"));
            block.push_str(&format!("Step: {}\n", s.step));
            block.push_str(&format!("Actions: {}\n", format_indices(indices)));
        } else {
            block.push_str(&format!("Step: {}\n", s.step));
        }
        blocks.push(block);
    }
    Ok(blocks.join("\n"))
}

fn format_indices(indices: &[usize]) -> String {
    let inner: Vec<String> = indices.iter().map(ToString::to_string).collect();
    format!("[{}]", inner.join(", "))
}

/// Replaces every step's reasoning with [`REASONING_OMITTED`].
pub fn strip_reasoning(plan: &Plan) -> Plan {
    Plan {
        steps: plan
            .steps
            .iter()
            .map(|s| PlanStep {
                reasoning: REASONING_OMITTED.to_string(),
                ..s.clone()
            })
            .collect(),
    }
}

/// First rule a grounded plan breaks, in checking order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundingViolation {
    MissingIndices { step: usize },
    EmptyStep { step: usize },
    OutOfRange { step: usize, index: usize, len: usize },
    Repeated { index: usize },
    UnorderedWithinStep { step: usize },
    NonConsecutive { step: usize },
    Gap { step: usize, missing: usize },
    Incomplete { missing: usize },
}

impl GroundingViolation {
    /// Short rule name, stable across releases.
    pub fn rule(&self) -> &'static str {
        match self {
            GroundingViolation::MissingIndices { .. } => "missing action indices",
            GroundingViolation::EmptyStep { .. } => "empty step",
            GroundingViolation::OutOfRange { .. } => "index out of range",
            GroundingViolation::Repeated { .. } => "repeated index",
            GroundingViolation::UnorderedWithinStep { .. } => "unordered indices",
            GroundingViolation::NonConsecutive { .. } => "non-consecutive assignment",
            GroundingViolation::Gap { .. } => "gap between steps",
            GroundingViolation::Incomplete { .. } => "incomplete coverage",
        }
    }
}

impl fmt::Display for GroundingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundingViolation::MissingIndices { step } => {
                write!(f, "{}: step {step} has no Actions list", self.rule())
            }
            GroundingViolation::EmptyStep { step } => {
                write!(f, "{}: step {step} owns no actions", self.rule())
            }
            GroundingViolation::OutOfRange { step, index, len } => write!(
                f,
                "{}: step {step} cites action {index} but the trajectory has {len}",
                self.rule()
            ),
            GroundingViolation::Repeated { index } => {
                write!(f, "{}: action {index} is assigned twice", self.rule())
            }
            GroundingViolation::UnorderedWithinStep { step } => {
                write!(f, "{}: step {step} lists indices out of order", self.rule())
            }
            GroundingViolation::NonConsecutive { step } => write!(
                f,
                "{}: step {step} takes actions that precede the previous step's",
                self.rule()
            ),
            GroundingViolation::Gap { step, missing } => write!(
                f,
                "{}: action {missing} is skipped before step {step}",
                self.rule()
            ),
            GroundingViolation::Incomplete { missing } => {
                write!(f, "{}: action {missing} is not assigned", self.rule())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub violation: Option<GroundingViolation>,
}

impl GroundingReport {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }
}

impl fmt::Display for GroundingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.violation {
            None => f.write_str("ok"),
            Some(v) => v.fmt(f),
        }
    }
}

/// Ok iff every step lists at least one index and concatenating the lists
/// gives exactly `0..n`.
pub fn validate_grounding(plan: &Plan, trajectory: &Trajectory) -> GroundingReport {
    validate_grounding_len(plan, trajectory.len())
}

pub fn validate_grounding_len(plan: &Plan, len: usize) -> GroundingReport {
    let mut lists = Vec::with_capacity(plan.steps.len());
    for s in &plan.steps {
        match &s.action_indices {
            Some(l) => lists.push((s.number, l.as_slice())),
            None => {
                return GroundingReport {
                    violation: Some(GroundingViolation::MissingIndices { step: s.number }),
                }
            }
        }
    }
    let flat: Vec<usize> = lists.iter().flat_map(|(_, l)| l.iter().copied()).collect();
    let nonempty = lists.iter().all(|(_, l)| !l.is_empty());
    if !plan.steps.is_empty() && nonempty && flat.iter().copied().eq(0..len) {
        return GroundingReport { violation: None };
    }
    GroundingReport {
        violation: Some(classify_grounding(&lists, len)),
    }
}

fn classify_grounding(lists: &[(usize, &[usize])], len: usize) -> GroundingViolation {
    if lists.is_empty() {
        return GroundingViolation::Incomplete { missing: 0 };
    }
    for &(step, l) in lists {
        if l.is_empty() {
            return GroundingViolation::EmptyStep { step };
        }
        if let Some(&index) = l.iter().find(|&&i| i >= len) {
            return GroundingViolation::OutOfRange { step, index, len };
        }
    }
    let mut seen = vec![false; len];
    for &(_, l) in lists {
        for &i in l {
            if seen[i] {
                return GroundingViolation::Repeated { index: i };
            }
            seen[i] = true;
        }
    }
    for &(step, l) in lists {
        if l.windows(2).any(|w| w[0] > w[1]) {
            return GroundingViolation::UnorderedWithinStep { step };
        }
    }
    let mut prev_max: Option<usize> = None;
    for &(step, l) in lists {
        let min = l[0];
        if prev_max.is_some_and(|m| min < m) {
            return GroundingViolation::NonConsecutive { step };
        }
        prev_max = l.last().copied();
    }
    // Ordered, distinct and in range, so something is skipped.
    let mut next = 0;
    for &(step, l) in lists {
        for &i in l {
            if i != next {
                return GroundingViolation::Gap { step, missing: next };
            }
            next += 1;
        }
    }
    GroundingViolation::Incomplete { missing: next }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionMatch {
    Exact,
    #[default]
    WhitespaceNormalized,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Checks that every step's description quotes the calls of the actions it
/// owns. Returns the numbers of steps whose descriptions do not.
pub fn check_descriptions(
    plan: &Plan,
    trajectory: &Trajectory,
    mode: DescriptionMatch,
) -> Vec<usize> {
    let norm = |s: &str| match mode {
        DescriptionMatch::Exact => s.to_string(),
        DescriptionMatch::WhitespaceNormalized => collapse_ws(s),
    };
    plan.steps
        .iter()
        .filter(|s| {
            let (Some(desc), Some(indices)) = (&s.description, &s.action_indices) else {
                return true;
            };
            let desc = norm(desc);
            !indices.iter().all(|&i| {
                trajectory
                    .get(i)
                    .is_some_and(|a| desc.contains(&norm(&dsl::render_call(a))))
            })
        })
        .map(|s| s.number)
        .collect()
}
