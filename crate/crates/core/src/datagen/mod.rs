//! Synthetic training-data pipeline: query synthesis, trajectory collection
//! and filtering, grounded plan annotation, replan and reasoning annotation,
//! plan expansion, failure classification, targeted augmentation and dataset
//! serialization.

mod annotate;
mod classify;
mod dataset;
mod expand;
mod queries;
mod trajectories;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Plan, TaskSpec, Trajectory, Website};
use crate::llm::{ChatMessage, CompletionError, Role, TemplateError};
use crate::plan::{validate_grounding, GroundingReport, PlanError};

pub use annotate::{
    annotate_cot, annotate_grounded_plan, annotate_replans, episode_to_sft_records,
    pair_to_planner_record, CotReport, ReplanAnnotation,
};
pub use classify::{classify_failures, parse_classification, LabeledPair, RubricSet};
pub use dataset::{
    lint_dataset, lint_record, read_dataset, read_jsonl, write_dataset, write_jsonl,
    write_quarantine, LintReport, Manifest,
};
pub use expand::{
    expand_plans, parse_data_pairs, preserves_ui_names, targeted_expand, ExpansionOptions,
    ExpansionReport, RawDataPair, TargetedReport, DEFAULT_UI_LEXICON,
};
pub use queries::{
    filter_feasible, generate_queries, parse_numbered_list, parse_verdict, FeasibilityReport,
    QueryGenOptions, QueryGenReport, Verdict,
};
pub use trajectories::{collect_trajectories, orm_filter, parse_orm_verdict, OrmReport};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("teacher output has the wrong format: {0}")]
    TeacherFormat(String),
    #[error("plan does not parse: {0}")]
    PlanParse(#[from] PlanError),
    #[error("grounding invalid: {0}")]
    GroundingInvalid(GroundingReport),
    #[error(transparent)]
    Completion(#[from] CompletionError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DatagenError {
    fn from(e: std::io::Error) -> Self {
        DatagenError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    SeedTrain,
    Synthetic,
    TargetedSynthetic,
}

impl QueryOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryOrigin::SeedTrain => "seed_train",
            QueryOrigin::Synthetic => "synthetic",
            QueryOrigin::TargetedSynthetic => "targeted_synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub website: Website,
    pub origin: QueryOrigin,
    #[serde(default)]
    pub seed_ids: Vec<String>,
}

/// Lowercased, whitespace-collapsed query text used for deduplication.
pub fn normalize_query(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn derived_id(prefix: &str, website: Website, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(website.as_str().as_bytes());
    h.update(b"\n");
    h.update(normalize_query(text).as_bytes());
    format!("{prefix}-{}", &hex::encode(h.finalize())[..12])
}

impl QueryRecord {
    pub fn seed(id: impl Into<String>, website: Website, text: impl Into<String>) -> Self {
        QueryRecord {
            id: id.into(),
            text: text.into(),
            website,
            origin: QueryOrigin::SeedTrain,
            seed_ids: Vec::new(),
        }
    }

    /// A generated query; its id is derived from the website and normalized
    /// text, so identical queries get identical ids across runs.
    pub fn derived(
        text: impl Into<String>,
        website: Website,
        origin: QueryOrigin,
        seed_ids: Vec<String>,
    ) -> Self {
        let text = text.into();
        let prefix = match origin {
            QueryOrigin::SeedTrain => "seed",
            QueryOrigin::Synthetic => "syn",
            QueryOrigin::TargetedSynthetic => "tgt",
        };
        QueryRecord {
            id: derived_id(prefix, website, &text),
            text,
            website,
            origin,
            seed_ids,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("query id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("query `{}` has empty text", self.id));
        }
        if self.origin != QueryOrigin::SeedTrain && self.seed_ids.is_empty() {
            return Err(format!("generated query `{}` has no seed ids", self.id));
        }
        Ok(())
    }

    /// A task whose environment is looked up by the query id.
    pub fn to_task(&self) -> TaskSpec {
        TaskSpec::new(self.id.clone(), self.website, self.text.clone())
    }
}

/// Where a pair's initial HTML comes from: the task or pair it was taken
/// from and, for expanded pairs, the 1-based example index the teacher cited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRef {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<usize>,
}

/// A plan whose steps carry action indices, with the trajectory it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedPlan {
    pub plan: Plan,
    pub episode: String,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPair {
    pub query: QueryRecord,
    pub initial_state_ref: StateRef,
    pub initial_html: String,
    /// The plan as a planner should produce it: no descriptions or indices.
    pub plan: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounded: Option<GroundedPlan>,
}

impl PlanPair {
    pub fn id(&self) -> &str {
        &self.query.id
    }

    pub fn validate(&self) -> Result<(), String> {
        self.query.validate()?;
        self.plan.validate()?;
        if let Some(g) = &self.grounded {
            let report = validate_grounding(&g.plan, &g.trajectory);
            if !report.is_ok() {
                return Err(format!("pair `{}`: {report}", self.id()));
            }
        }
        Ok(())
    }
}

/// Plain plan: descriptions and action indices removed.
pub fn plain_plan(plan: &Plan) -> Plan {
    let mut p = plan.clone();
    for s in &mut p.steps {
        s.description = None;
        s.action_indices = None;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flavor {
    #[serde(rename = "PlannerSFT")]
    PlannerSft,
    #[serde(rename = "ExecutorSFT")]
    ExecutorSft,
    #[serde(rename = "ReplannerSFT")]
    ReplannerSft,
    #[serde(rename = "PlannerCoT")]
    PlannerCot,
    #[serde(rename = "ExecutorCoT")]
    ExecutorCot,
}

impl Flavor {
    pub const ALL: [Flavor; 5] = [
        Flavor::PlannerSft,
        Flavor::ExecutorSft,
        Flavor::ReplannerSft,
        Flavor::PlannerCot,
        Flavor::ExecutorCot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::PlannerSft => "PlannerSFT",
            Flavor::ExecutorSft => "ExecutorSFT",
            Flavor::ReplannerSft => "ReplannerSFT",
            Flavor::PlannerCot => "PlannerCoT",
            Flavor::ExecutorCot => "ExecutorCoT",
        }
    }

    /// Whether targets follow the plan grammar (otherwise the action DSL).
    pub fn is_plan(self) -> bool {
        matches!(
            self,
            Flavor::PlannerSft | Flavor::ReplannerSft | Flavor::PlannerCot
        )
    }

    pub fn is_cot(self) -> bool {
        matches!(self, Flavor::PlannerCot | Flavor::ExecutorCot)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// Task or pair id the record was built from.
    pub source: String,
    /// Provenance label, e.g. `episode`, `synthetic`, `replan_annotation`.
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    /// The target before a reasoning trace was prepended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub flavor: Flavor,
    pub messages: Vec<ChatMessage>,
    pub target: String,
    pub meta: RecordMeta,
}

/// An item a stage refused, with the reason. Quarantine files hold these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub stage: String,
    pub id: String,
    pub reason: String,
    pub item: serde_json::Value,
}

impl Quarantined {
    pub fn new(stage: &str, id: impl Into<String>, reason: impl Into<String>, item: impl Serialize) -> Self {
        Quarantined {
            stage: stage.to_string(),
            id: id.into(),
            reason: reason.into(),
            item: serde_json::to_value(item).unwrap_or(serde_json::Value::Null),
        }
    }
}

/// Text of a message list with role headers, as shown to annotators.
pub(crate) fn render_transcript(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            format!("[{role}]\n{}", m.content)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Markdown section body under `## {title}` up to the next `## ` header.
pub(crate) fn section<'a>(text: &'a str, title: &str) -> Option<&'a str> {
    let header = format!("## {title}");
    let mut offset = 0;
    let mut start = None;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if let Some(s) = start {
            if t.starts_with("## ") {
                return Some(text[s..offset].trim());
            }
        } else if t.eq_ignore_ascii_case(&header) {
            start = Some(offset + line.len());
        }
        offset += line.len();
    }
    start.map(|s| text[s..].trim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_collapses_case_and_space() {
        assert_eq!(normalize_query("  Find  the\tLibrary \n"), "find the library");
    }

    #[test]
    fn derived_ids_are_stable_and_normalized() {
        let a = QueryRecord::derived("Find X", Website::Map, QueryOrigin::Synthetic, vec!["s".into()]);
        let b = QueryRecord::derived("find   x", Website::Map, QueryOrigin::Synthetic, vec!["s".into()]);
        assert_eq!(a.id, b.id);
        assert!(a.id.starts_with("syn-"));
    }

    #[test]
    fn generated_queries_need_seeds() {
        let q = QueryRecord::derived("x", Website::Map, QueryOrigin::Synthetic, vec![]);
        assert!(q.validate().is_err());
        assert!(QueryRecord::seed("s1", Website::Map, "x").validate().is_ok());
    }

    #[test]
    fn sections_are_extracted() {
        let text = "## Reasoning\nbecause\n\n## Verdict\nFEASIBLE\n";
        assert_eq!(section(text, "Verdict"), Some("FEASIBLE"));
        assert_eq!(section(text, "Reasoning"), Some("because"));
        assert_eq!(section(text, "Other"), None);
    }

    #[test]
    fn flavors_serialize_with_spec_names() {
        assert_eq!(serde_json::to_string(&Flavor::PlannerSft).unwrap(), "\"PlannerSFT\"");
        assert_eq!(serde_json::to_string(&Flavor::ExecutorCot).unwrap(), "\"ExecutorCoT\"");
    }
}
