use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{plain_plan, section, DatagenError, PlanPair};
use crate::domain::Website;
use crate::llm::{names, ChatMessage, ModelBinding, Slots, TemplateSet};
use crate::par::par_map;
use crate::runtime::render_plan_text;

/// Failure-class rubrics per website.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RubricSet {
    rubrics: BTreeMap<Website, String>,
}

const BUILTIN: &[(Website, &str)] = &[
    (Website::ShoppingAdmin, include_str!("../../rubrics/shopping_admin.md")),
    (Website::Reddit, include_str!("../../rubrics/reddit.md")),
    (Website::Gitlab, include_str!("../../rubrics/gitlab.md")),
    (Website::Shopping, include_str!("../../rubrics/shopping.md")),
    (Website::Map, include_str!("../../rubrics/map.md")),
];

fn class_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^#{1,4}\s*Class\s+([A-Z]+)\b").expect("static regex"))
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[Cc]lass\s+([A-Z]{1,2})\b").expect("static regex"))
}

impl RubricSet {
    pub fn builtin() -> Self {
        RubricSet {
            rubrics: BUILTIN.iter().map(|(w, r)| (*w, r.to_string())).collect(),
        }
    }

    /// Builtin rubrics overridden by any `<website>.md` in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, DatagenError> {
        let mut set = RubricSet::builtin();
        for w in Website::ALL {
            let path = dir.join(format!("{}.md", w.as_str()));
            if path.exists() {
                set.insert(w, std::fs::read_to_string(&path)?);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, website: Website, rubric: impl Into<String>) {
        self.rubrics.insert(website, rubric.into());
    }

    pub fn get(&self, website: Website) -> Option<&str> {
        self.rubrics.get(&website).map(String::as_str)
    }

    /// Class letters a rubric defines, e.g. `{"A", "B"}`.
    pub fn classes(&self, website: Website) -> BTreeSet<String> {
        self.get(website)
            .map(|r| class_re().captures_iter(r).map(|c| c[1].to_string()).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: PlanPair,
    /// `Class X` or `Other`.
    pub label: String,
    pub reasoning: String,
    /// Set when the verdict could not be read and `Other` was assumed.
    #[serde(default)]
    pub flagged: bool,
}

/// Reads the `## Classification` verdict. Returns the label and whether it
/// had to fall back to `Other`.
pub fn parse_classification(text: &str, classes: &BTreeSet<String>) -> (String, bool) {
    let Some(body) = section(text, "Classification") else {
        return ("Other".into(), true);
    };
    if let Some(c) = verdict_re().captures(body) {
        let letter = c[1].to_string();
        if classes.contains(&letter) {
            return (format!("Class {letter}"), false);
        }
        return ("Other".into(), true);
    }
    if body.to_ascii_lowercase().contains("other") {
        return ("Other".into(), false);
    }
    ("Other".into(), true)
}

/// Labels each pair with the failure class it would help fix.
pub fn classify_failures(
    pairs: &[PlanPair],
    website: Website,
    teacher: &ModelBinding,
    templates: &TemplateSet,
    rubrics: &RubricSet,
    workers: usize,
) -> Result<Vec<LabeledPair>, DatagenError> {
    let rubric = rubrics.get(website).ok_or_else(|| {
        DatagenError::Precondition(format!("no failure-class rubric for website `{website}`"))
    })?;
    let classes = rubrics.classes(website);
    let system = templates.render(
        names::CLASSIFIER_SYSTEM,
        &Slots::new()
            .set("website", website.as_str())
            .set("classification_section_for_website", rubric),
    )?;
    let replies = par_map(pairs, workers, |p| -> Result<String, DatagenError> {
        let user = templates.render(
            names::CLASSIFIER_USER,
            &Slots::new()
                .set("website", website.as_str())
                .set("user_query", p.query.text.as_str())
                .set("plan", render_plan_text(&plain_plan(&p.plan))),
        )?;
        Ok(teacher.complete(vec![ChatMessage::system(system.clone()), ChatMessage::user(user)])?)
    });
    pairs
        .iter()
        .zip(replies)
        .map(|(p, reply)| {
            let reply = reply?;
            let (label, flagged) = parse_classification(&reply, &classes);
            Ok(LabeledPair {
                pair: p.clone(),
                label,
                reasoning: section(&reply, "Reasoning").unwrap_or("").to_string(),
                flagged,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rubrics_cover_five_sites() {
        let r = RubricSet::builtin();
        for w in [Website::ShoppingAdmin, Website::Reddit, Website::Gitlab, Website::Shopping, Website::Map] {
            assert!(r.get(w).is_some(), "{w}");
            assert!(r.classes(w).contains("A"), "{w}");
        }
        assert!(r.get(Website::Multi).is_none());
    }

    #[test]
    fn verdicts_parse() {
        let classes: BTreeSet<String> = ["A".to_string(), "B".to_string()].into();
        let reply = |v: &str| format!("## Reasoning\nwhy\n\n## Classification\n{v}\n");
        assert_eq!(parse_classification(&reply("Class A"), &classes), ("Class A".into(), false));
        assert_eq!(parse_classification(&reply("\"Class B\""), &classes), ("Class B".into(), false));
        assert_eq!(parse_classification(&reply("Other"), &classes), ("Other".into(), false));
        assert_eq!(parse_classification(&reply("Class Q"), &classes), ("Other".into(), true));
        assert_eq!(parse_classification("no sections", &classes), ("Other".into(), true));
    }
}
