use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{
    normalize_query, plain_plan, DatagenError, LabeledPair, PlanPair, QueryOrigin, QueryRecord,
    Quarantined, StateRef,
};
use crate::env::simplify_html;
use crate::llm::{names, ChatMessage, ModelBinding, Slots, TemplateSet};
use crate::par::par_map;
use crate::plan::{parse_plan, PlanVariant};
use crate::runtime::render_plan_text;

/// UI labels that targeted augmentation must carry over unchanged when the
/// seed plan quotes them.
pub const DEFAULT_UI_LEXICON: &[&str] = &[
    "Reports",
    "Sales",
    "Orders",
    "Shipping",
    "Invoiced",
    "Refunds",
    "Products",
    "Catalog",
    "Customers",
    "All Customers",
    "Marketing",
    "Content",
    "Stores",
    "Dashboard",
    "Search Terms",
    "Bestsellers",
    "Product Reviews",
    "Show Report",
    "Filter",
    "Filters",
    "Apply Filters",
    "Search",
    "Go",
    "Save",
    "Update attributes",
    "Change status",
    "Actions",
    "Select All",
    "Submit",
    "Period",
    "From",
    "To",
    "Order Status",
    "Merge requests",
    "Issues",
    "Repository",
    "Members",
    "Settings",
    "New issue",
    "New project",
    "Forums",
    "Comments",
    "Submissions",
    "Subscribe",
    "Add to Cart",
    "My Account",
    "My Orders",
    "Directions",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionOptions {
    pub seeds_per_call: usize,
    pub per_call: usize,
    pub target: usize,
    /// Hard cap on teacher calls.
    pub max_calls: usize,
    /// Character budget for each example's simplified html.
    pub example_html_budget: usize,
    pub seed: u64,
}

impl ExpansionOptions {
    pub fn new(target: usize) -> Self {
        let per_call = 10;
        ExpansionOptions {
            seeds_per_call: 5,
            per_call,
            target,
            max_calls: (target.div_ceil(per_call) * 3).max(1),
            example_html_budget: 4_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionReport {
    pub pairs: Vec<PlanPair>,
    pub calls: usize,
    pub malformed: usize,
    pub out_of_range: usize,
    pub invalid_plans: usize,
    pub duplicates: usize,
    pub rejected: Vec<Quarantined>,
}

/// One `## Data Pair` block as written by the teacher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataPair {
    pub query: String,
    /// The cited example index, when the block has an initial-state field.
    pub example: Option<usize>,
    pub plan: String,
}

fn pair_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#{1,3}\s*Data Pair\b.*$").expect("static regex"))
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\**(User Query|Initial HTML State|Global Plan)\**\s*:\**\s*(.*)$")
            .expect("static regex")
    })
}

fn parse_block(lines: &[&str]) -> Result<RawDataPair, String> {
    let mut fields: Vec<(String, Vec<&str>)> = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            continue;
        }
        let in_plan = fields.last().is_some_and(|(l, _)| l == "Global Plan");
        match label_re().captures(line.trim()) {
            Some(c) if !in_plan => {
                let rest = c.get(2).map_or("", |m| m.as_str());
                fields.push((c[1].to_string(), vec![rest]));
            }
            _ => match fields.last_mut() {
                Some((_, body)) => body.push(line),
                None if line.trim().is_empty() => {}
                None => return Err(format!("text before the first field: `{}`", line.trim())),
            },
        }
    }
    let get = |name: &str| {
        fields
            .iter()
            .find(|(l, _)| l == name)
            .map(|(_, body)| body.join("\n").trim().to_string())
    };
    let query = get("User Query")
        .filter(|q| !q.is_empty())
        .ok_or("missing User Query")?;
    let plan = get("Global Plan")
        .filter(|p| !p.is_empty())
        .ok_or("missing Global Plan")?;
    let example = match get("Initial HTML State") {
        None => None,
        Some(s) => {
            let digits: String = s
                .chars()
                .skip_while(|c| !c.is_ascii_digit())
                .take_while(|c| c.is_ascii_digit())
                .collect();
            Some(
                digits
                    .parse::<usize>()
                    .map_err(|_| format!("initial state `{s}` is not an example index"))?,
            )
        }
    };
    Ok(RawDataPair {
        query,
        example,
        plan,
    })
}

/// Splits teacher output into `## Data Pair` blocks. Each block parses or
/// reports why it did not.
pub fn parse_data_pairs(text: &str) -> Vec<Result<RawDataPair, String>> {
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| pair_header_re().is_match(l.trim()))
        .map(|(i, _)| i)
        .collect();
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let end = starts.get(k + 1).copied().unwrap_or(lines.len());
            parse_block(&lines[s + 1..end])
        })
        .collect()
}

fn examples_str(batch: &[&PlanPair], html_budget: usize) -> String {
    batch
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "# Example {}\n## User Query\n{}\n\n## Initial HTML State\n{}\n\n## Global Plan\n{}",
                i + 1,
                p.query.text,
                simplify_html(&p.initial_html, html_budget),
                render_plan_text(&plain_plan(&p.plan)).trim_end()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Grows the pair pool from seeds: each call shows the teacher a seeded
/// sample of seeds and asks for new pairs, each starting from one of the
/// sampled examples' initial states. Stops at the target or the call cap.
pub fn expand_plans(
    seeds: &[PlanPair],
    teacher: &ModelBinding,
    templates: &TemplateSet,
    opts: &ExpansionOptions,
) -> Result<ExpansionReport, DatagenError> {
    if opts.seeds_per_call == 0 || seeds.len() < opts.seeds_per_call {
        return Err(DatagenError::Precondition(format!(
            "expansion needs at least {} seed pairs, got {}",
            opts.seeds_per_call,
            seeds.len()
        )));
    }
    let mut report = ExpansionReport::default();
    let mut seen: BTreeSet<String> = seeds.iter().map(|p| normalize_query(&p.query.text)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let user = templates.render(
        names::EXPANSION_USER,
        &Slots::new().set("how_many_to_generate_at_once", opts.per_call.to_string()),
    )?;

    while report.pairs.len() < opts.target && report.calls < opts.max_calls {
        let batch: Vec<&PlanPair> = seeds.choose_multiple(&mut rng, opts.seeds_per_call).collect();
        let system = templates.render(
            names::EXPANSION_SYSTEM,
            &Slots::new().set("examples_str", examples_str(&batch, opts.example_html_budget)),
        )?;
        report.calls += 1;
        let raw = teacher.complete(vec![ChatMessage::system(system), ChatMessage::user(user.clone())])?;
        let seed_ids: Vec<String> = batch.iter().map(|p| p.id().to_string()).collect();
        let blocks = parse_data_pairs(&raw);
        if blocks.is_empty() {
            report.malformed += 1;
            report.rejected.push(Quarantined::new(
                "expand_plans",
                format!("call-{}", report.calls),
                "no data pair blocks",
                &raw,
            ));
        }
        for block in blocks {
            if report.pairs.len() >= opts.target {
                break;
            }
            let rp = match block {
                Ok(rp) => rp,
                Err(reason) => {
                    report.malformed += 1;
                    report.rejected.push(Quarantined::new(
                        "expand_plans",
                        format!("call-{}", report.calls),
                        reason,
                        serde_json::Value::Null,
                    ));
                    continue;
                }
            };
            let reject = |report: &mut ExpansionReport, reason: String| {
                report.rejected.push(Quarantined::new(
                    "expand_plans",
                    format!("call-{}", report.calls),
                    reason,
                    serde_json::json!({"query": rp.query, "example": rp.example, "plan": rp.plan}),
                ));
            };
            let source = match rp.example {
                Some(i) if (1..=batch.len()).contains(&i) => batch[i - 1],
                other => {
                    report.out_of_range += 1;
                    reject(&mut report, format!("example index {other:?} outside 1..={}", batch.len()));
                    continue;
                }
            };
            let plan = match parse_plan(&rp.plan, PlanVariant::Plain) {
                Ok(p) => p,
                Err(e) => {
                    report.invalid_plans += 1;
                    reject(&mut report, format!("plan: {e}"));
                    continue;
                }
            };
            if !seen.insert(normalize_query(&rp.query)) {
                report.duplicates += 1;
                reject(&mut report, "duplicate query".into());
                continue;
            }
            report.pairs.push(PlanPair {
                query: QueryRecord::derived(
                    rp.query.clone(),
                    source.query.website,
                    QueryOrigin::Synthetic,
                    seed_ids.clone(),
                ),
                initial_state_ref: StateRef {
                    source: source.id().to_string(),
                    example: rp.example,
                },
                initial_html: source.initial_html.clone(),
                plan: plain_plan(&plan),
                grounded: None,
            });
        }
    }
    Ok(report)
}

/// Checks that every lexicon label the seed plan quotes is quoted verbatim
/// in the new plan too. Returns the first label that was lost.
pub fn preserves_ui_names(seed_plan: &str, new_plan: &str, lexicon: &[String]) -> Result<(), String> {
    let quoted = |text: &str, name: &str| {
        text.contains(&format!("'{name}'")) || text.contains(&format!("\"{name}\""))
    };
    for name in lexicon {
        if quoted(seed_plan, name) && !quoted(new_plan, name) {
            return Err(format!("UI name '{name}' is not preserved"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetedReport {
    pub pairs: Vec<PlanPair>,
    pub rejected: Vec<Quarantined>,
}

/// One new pair per labeled seed, keeping the goal and UI names while
/// varying the surface. Seeds labeled `Other` are skipped.
pub fn targeted_expand(
    seeds: &[LabeledPair],
    teacher: &ModelBinding,
    templates: &TemplateSet,
    lexicon: &[String],
    workers: usize,
) -> Result<TargetedReport, DatagenError> {
    let targeted: Vec<&LabeledPair> = seeds.iter().filter(|s| s.label != "Other").collect();
    let replies = par_map(&targeted, workers, |seed| -> Result<String, DatagenError> {
        let example = format!(
            "## Data Pair 1\nUser Query:\n{}\n\nInitial HTML State:\n1\n\nGlobal Plan:\n{}",
            seed.pair.query.text,
            render_plan_text(&plain_plan(&seed.pair.plan)).trim_end()
        );
        let prompt = templates.render(
            names::TARGETED_EXPANSION,
            &Slots::new().set("example_str", example),
        )?;
        Ok(teacher.complete(vec![ChatMessage::user(prompt)])?)
    });
    let mut report = TargetedReport::default();
    for (seed, reply) in targeted.iter().zip(replies) {
        let reply = reply?;
        let seed_plan = render_plan_text(&plain_plan(&seed.pair.plan));
        let result = parse_data_pairs(&reply)
            .into_iter()
            .next()
            .unwrap_or_else(|| Err("no data pair block".into()))
            .and_then(|rp| {
                let plan = parse_plan(&rp.plan, PlanVariant::Plain).map_err(|e| format!("plan: {e}"))?;
                if normalize_query(&rp.query) == normalize_query(&seed.pair.query.text) {
                    return Err("query is identical to the seed".into());
                }
                preserves_ui_names(&seed_plan, &render_plan_text(&plan), lexicon)?;
                Ok((rp.query, plan))
            });
        match result {
            Ok((query, plan)) => report.pairs.push(PlanPair {
                query: QueryRecord::derived(
                    query,
                    seed.pair.query.website,
                    QueryOrigin::TargetedSynthetic,
                    vec![seed.pair.id().to_string()],
                ),
                initial_state_ref: seed.pair.initial_state_ref.clone(),
                initial_html: seed.pair.initial_html.clone(),
                plan: plain_plan(&plan),
                grounded: None,
            }),
            Err(reason) => report.rejected.push(Quarantined::new(
                "targeted_expand",
                seed.pair.id(),
                reason,
                &reply,
            )),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_pairs_parse_with_plans_and_indices() {
        let text = "Sure.\n```\n## Data Pair 1\nUser Query:\nFind a cafe\n\nInitial HTML State:\n3\n\nGlobal Plan:\n## Step 1\nReasoning: r\nStep: s\n```\n\n## Data Pair 2\nUser Query: Inline query\nInitial HTML State: Example 2\nGlobal Plan:\n## Step 1\nReasoning: User Query: quoted\nStep: s\n";
        let pairs = parse_data_pairs(text);
        assert_eq!(pairs.len(), 2);
        let a = pairs[0].as_ref().unwrap();
        assert_eq!(a.query, "Find a cafe");
        assert_eq!(a.example, Some(3));
        assert_eq!(a.plan, "## Step 1\nReasoning: r\nStep: s");
        let b = pairs[1].as_ref().unwrap();
        assert_eq!(b.query, "Inline query");
        assert_eq!(b.example, Some(2));
        assert!(b.plan.contains("Reasoning: User Query: quoted"));
    }

    #[test]
    fn malformed_blocks_report_reasons() {
        let pairs = parse_data_pairs("## Data Pair 1\nUser Query:\nq\n\n## Data Pair 2\nGlobal Plan:\n## Step 1\nReasoning: r\nStep: s\nInitial");
        assert_eq!(pairs[0], Err("missing Global Plan".into()));
        assert_eq!(pairs[1], Err("missing User Query".into()));
        let bad_index = parse_data_pairs("## Data Pair 1\nUser Query:\nq\nInitial HTML State:\nthe first\nGlobal Plan:\np");
        assert!(bad_index[0].as_ref().unwrap_err().contains("not an example index"));
    }

    #[test]
    fn renamed_button_fails_the_lexicon_check() {
        let lexicon = vec!["Show Report".to_string(), "Save".to_string()];
        let seed = "Step: Click 'Show Report' to generate the report.";
        assert!(preserves_ui_names(seed, "Step: Click 'Show Report' now.", &lexicon).is_ok());
        let err = preserves_ui_names(seed, "Step: Click 'Generate Report' now.", &lexicon).unwrap_err();
        assert!(err.contains("Show Report"));
        assert!(preserves_ui_names("no quotes here", "anything", &lexicon).is_ok());
    }
}
