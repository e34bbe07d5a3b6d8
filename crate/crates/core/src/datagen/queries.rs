use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{normalize_query, section, DatagenError, QueryOrigin, QueryRecord, Quarantined};
use crate::domain::Website;
use crate::llm::{names, ChatMessage, ModelBinding, Slots, TemplateSet};
use crate::par::par_map;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGenOptions {
    /// Seeds shown per teacher call.
    pub seeds_per_call: usize,
    /// Queries requested per call.
    pub per_call: usize,
    /// Teacher calls per website present in the seed pool.
    pub calls_per_website: usize,
    /// Extra attempts when a reply has no numbered list.
    pub retries: usize,
    pub seed: u64,
}

impl Default for QueryGenOptions {
    fn default() -> Self {
        QueryGenOptions {
            seeds_per_call: 5,
            per_call: 10,
            calls_per_website: 1,
            retries: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryGenReport {
    pub queries: Vec<QueryRecord>,
    /// Generated queries dropped because their normalized text was seen.
    pub duplicates: usize,
    /// Batches dropped after every attempt came back unparseable.
    pub skipped_batches: usize,
    pub calls: usize,
}

fn numbered_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]\s+(.+?)\s*$").expect("static regex"))
}

/// Items of a `1. ...` / `2) ...` list; other lines are ignored.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| numbered_re().captures(l))
        .map(|c| {
            let item = c[1].trim();
            let unquoted = item
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(item);
            unquoted.trim().to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Asks the teacher for new queries modelled on sampled seeds, per website.
pub fn generate_queries(
    seeds: &[QueryRecord],
    teacher: &ModelBinding,
    templates: &TemplateSet,
    opts: &QueryGenOptions,
) -> Result<QueryGenReport, DatagenError> {
    if seeds.is_empty() {
        return Err(DatagenError::Precondition("seed pool is empty".into()));
    }
    if opts.seeds_per_call == 0 || opts.per_call == 0 {
        return Err(DatagenError::Precondition(
            "seeds per call and queries per call must be positive".into(),
        ));
    }
    let mut by_site: BTreeMap<Website, Vec<&QueryRecord>> = BTreeMap::new();
    for s in seeds {
        by_site.entry(s.website).or_default().push(s);
    }
    let mut seen: BTreeSet<String> = seeds.iter().map(|s| normalize_query(&s.text)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = QueryGenReport::default();

    for (site, pool) in &by_site {
        for _ in 0..opts.calls_per_website {
            let batch: Vec<&QueryRecord> = pool
                .choose_multiple(&mut rng, opts.seeds_per_call.min(pool.len()))
                .copied()
                .collect();
            let examples = batch
                .iter()
                .enumerate()
                .map(|(i, q)| format!("{}. {}", i + 1, q.text))
                .collect::<Vec<_>>()
                .join("\n");
            let messages = vec![
                ChatMessage::system(templates.render(
                    names::QUERY_GENERATOR_SYSTEM,
                    &Slots::new()
                        .set("website", site.display_name())
                        .set("examples", examples),
                )?),
                ChatMessage::user(templates.render(
                    names::QUERY_GENERATOR_USER,
                    &Slots::new().set("how_many", opts.per_call.to_string()),
                )?),
            ];
            let mut items = Vec::new();
            for _ in 0..=opts.retries {
                report.calls += 1;
                items = parse_numbered_list(&teacher.complete(messages.clone())?);
                if !items.is_empty() {
                    break;
                }
            }
            if items.is_empty() {
                tracing::warn!(website = %site, "query batch skipped: no numbered list");
                report.skipped_batches += 1;
                continue;
            }
            let seed_ids: Vec<String> = batch.iter().map(|q| q.id.clone()).collect();
            for text in items.into_iter().take(opts.per_call) {
                if !seen.insert(normalize_query(&text)) {
                    report.duplicates += 1;
                    continue;
                }
                report.queries.push(QueryRecord::derived(
                    text,
                    *site,
                    QueryOrigin::Synthetic,
                    seed_ids.clone(),
                ));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    Infeasible,
}

/// Reads the word under `## Verdict`.
pub fn parse_verdict(text: &str) -> Option<Verdict> {
    let body = section(text, "Verdict")?;
    let word: String = body
        .split_whitespace()
        .next()?
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    match word.to_ascii_uppercase().as_str() {
        "FEASIBLE" => Some(Verdict::Feasible),
        "INFEASIBLE" => Some(Verdict::Infeasible),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub kept: Vec<QueryRecord>,
    pub dropped: Vec<Quarantined>,
    /// Ids kept only because the judge's reply had no readable verdict.
    pub flagged: Vec<String>,
}

/// Drops queries the judge calls infeasible. Unreadable verdicts keep the
/// query and flag it.
pub fn filter_feasible(
    queries: &[QueryRecord],
    judge: &ModelBinding,
    templates: &TemplateSet,
    workers: usize,
) -> Result<FeasibilityReport, DatagenError> {
    let replies = par_map(queries, workers, |q| -> Result<String, DatagenError> {
        let prompt = templates.render(
            names::FEASIBILITY_JUDGE,
            &Slots::new()
                .set("website", q.website.display_name())
                .set("query", q.text.as_str()),
        )?;
        Ok(judge.complete(vec![ChatMessage::user(prompt)])?)
    });
    let mut report = FeasibilityReport::default();
    for (q, reply) in queries.iter().zip(replies) {
        let reply = reply?;
        match parse_verdict(&reply) {
            Some(Verdict::Feasible) => report.kept.push(q.clone()),
            Some(Verdict::Infeasible) => report.dropped.push(Quarantined::new(
                "filter_feasible",
                q.id.clone(),
                format!("judged infeasible: {}", section(&reply, "Reasoning").unwrap_or("")),
                q,
            )),
            None => {
                report.flagged.push(q.id.clone());
                report.kept.push(q.clone());
            }
        }
    }
    Ok(report)
}
