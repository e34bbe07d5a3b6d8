mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::*;
use planact::datagen::{
    annotate_cot, annotate_grounded_plan, annotate_replans, episode_to_sft_records, expand_plans,
    lint_dataset, read_dataset, targeted_expand, write_dataset, DatagenError, ExpansionOptions,
    Flavor, LabeledPair, Manifest, QueryOrigin,
};
use planact::domain::{Plan, TaskSpec, Website};
use planact::eval::{synthetic_episodes, SuiteTask};
use planact::llm::{ModelBinding, ScriptedProvider, TemplateSet};
use planact::plan::{parse_plan, render_plan, PlanVariant};
use planact::runtime::{PlanningMode, Prompts, DEFAULT_HTML_BUDGET};

fn teacher(replies: &[String]) -> (ModelBinding, Arc<ScriptedProvider>) {
    let p = Arc::new(ScriptedProvider::from_queue(replies.iter().cloned()));
    (ModelBinding::new(p.clone(), "teacher"), p)
}

/// `plan` with descriptions and the given index lists, rendered grounded.
fn grounded_reply(plan: &Plan, lists: &[&[usize]]) -> String {
    let mut plan = plan.clone();
    plan.steps.truncate(lists.len());
    for (step, ids) in plan.steps.iter_mut().zip(lists) {
        step.description = Some(format!("Actions {ids:?} carry out this step."));
        step.action_indices = Some(ids.to_vec());
    }
    render_plan(&plan, PlanVariant::Grounded).unwrap()
}

fn indices(plan: &Plan) -> Vec<Vec<usize>> {
    plan.steps.iter().map(|s| s.action_indices.clone().unwrap()).collect()
}

#[test]
fn shipping_trajectory_grounds_into_five_steps() {
    let (ep, _) = run_lite(SHIPPING_TASK, PlanningMode::Dynamic);
    assert_eq!(ep.rounds.len(), 7);
    let plan = parse_plan(&appendix("a1_shipping_plan.md"), PlanVariant::Plain).unwrap();
    let reply = grounded_reply(&plan, &[&[0, 1], &[2, 3], &[4], &[5], &[6]]);
    let (binding, provider) = teacher(&[reply]);
    let templates = TemplateSet::builtin();
    let pair = annotate_grounded_plan(&ep, &binding, Prompts::new(&templates, DEFAULT_HTML_BUDGET)).unwrap();
    let g = pair.grounded.as_ref().unwrap();
    assert_eq!(indices(&g.plan), vec![vec![0, 1], vec![2, 3], vec![4], vec![5], vec![6]]);
    assert_eq!(g.trajectory, ep.trajectory());
    assert!(pair.plan.steps.iter().all(|s| s.action_indices.is_none() && s.description.is_none()));
    assert_eq!(provider.call_count(), 1);
    pair.validate().unwrap();
}

#[test]
fn forbidden_split_is_rejected_after_one_correction() {
    let (ep, _) = run_lite(MAP_TASK, PlanningMode::Dynamic);
    assert_eq!(ep.rounds.len(), 5);
    let plan = parse_plan(&appendix("a1_map_plan.md"), PlanVariant::Plain).unwrap();
    let bad = grounded_reply(&plan, &[&[0, 3, 4], &[1, 2]]);
    let (binding, provider) = teacher(&[bad.clone(), bad]);
    let templates = TemplateSet::builtin();
    let err = annotate_grounded_plan(&ep, &binding, Prompts::new(&templates, DEFAULT_HTML_BUDGET)).unwrap_err();
    match err {
        DatagenError::GroundingInvalid(report) => {
            assert!(report.to_string().starts_with("non-consecutive"), "{report}")
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(provider.call_count(), 2);
    let retry = provider.calls()[1].messages.last().unwrap().content.clone();
    assert!(retry.contains("non-consecutive"));
}

#[test]
fn correction_turn_recovers_a_bad_first_answer() {
    let (ep, _) = run_lite(MAP_TASK, PlanningMode::Dynamic);
    let plan = parse_plan(&appendix("a1_map_plan.md"), PlanVariant::Plain).unwrap();
    let bad = grounded_reply(&plan, &[&[0, 3, 4], &[1, 2]]);
    let good = grounded_reply(&plan, &[&[0, 1, 2], &[3, 4]]);
    let (binding, _) = teacher(&[bad, good]);
    let templates = TemplateSet::builtin();
    let pair = annotate_grounded_plan(&ep, &binding, Prompts::new(&templates, DEFAULT_HTML_BUDGET)).unwrap();
    assert_eq!(indices(&pair.grounded.unwrap().plan), vec![vec![0, 1, 2], vec![3, 4]]);
}

#[test]
fn map_episode_yields_one_replan_record_per_later_round() {
    let (ep, _) = run_lite(MAP_TASK, PlanningMode::Dynamic);
    let n = ep.rounds.len();
    let plan = parse_plan(&appendix("a1_map_plan.md"), PlanVariant::Plain).unwrap();
    let templates = TemplateSet::builtin();
    let p = Prompts::new(&templates, DEFAULT_HTML_BUDGET);
    let (binding, _) = teacher(&[grounded_reply(&plan, &[&[0, 1, 2], &[3], &[4]])]);
    let pair = annotate_grounded_plan(&ep, &binding, p).unwrap();
    let replies: Vec<String> = (1..n)
        .map(|t| {
            let future: Vec<usize> = (0..n - t).collect();
            grounded_reply(&plan, &[&future])
        })
        .collect();
    let (binding, provider) = teacher(&replies);
    let ann = annotate_replans(&ep, &pair, &binding, p).unwrap();
    assert_eq!(ann.records.len(), 4);
    assert!(ann.skipped.is_empty());
    assert_eq!(provider.call_count(), 4);
    for (i, r) in ann.records.iter().enumerate() {
        assert_eq!(r.flavor, Flavor::ReplannerSft);
        assert_eq!(r.meta.round, Some(i + 1));
        assert!(!r.target.contains("Actions:"));
    }
    // The last round sees one future action, numbered from zero.
    let last = provider.calls()[3].messages.last().unwrap().content.clone();
    assert!(last.contains("Action 0:") && !last.contains("Action 1:"));
}

#[test]
fn bad_replan_round_is_skipped_and_the_plan_reused() {
    let (ep, _) = run_lite(MAP_TASK, PlanningMode::Dynamic);
    let plan = parse_plan(&appendix("a1_map_plan.md"), PlanVariant::Plain).unwrap();
    let templates = TemplateSet::builtin();
    let p = Prompts::new(&templates, DEFAULT_HTML_BUDGET);
    let (binding, _) = teacher(&[grounded_reply(&plan, &[&[0, 1, 2, 3, 4]])]);
    let pair = annotate_grounded_plan(&ep, &binding, p).unwrap();
    let replies = vec![
        grounded_reply(&plan, &[&[0, 1, 2, 3]]),
        grounded_reply(&plan, &[&[0, 2]]),
        grounded_reply(&plan, &[&[0, 1]]),
        grounded_reply(&plan, &[&[0]]),
    ];
    let (binding, _) = teacher(&replies);
    let ann = annotate_replans(&ep, &pair, &binding, p).unwrap();
    assert_eq!(ann.records.len(), 3);
    assert_eq!(ann.skipped.len(), 1);
    assert_eq!(ann.skipped[0].0, 2);
}

fn eight_action_episode() -> planact::domain::Episode {
    let task = SuiteTask {
        task: TaskSpec::new("map_eight", Website::Map, "Follow eight links"),
        steps: 8,
        success: true,
    };
    synthetic_episodes(&[task]).remove(0)
}

#[test]
fn eight_action_episode_gives_one_planner_and_eight_executor_records() {
    let ep = eight_action_episode();
    let templates = TemplateSet::builtin();
    let p = Prompts::new(&templates, DEFAULT_HTML_BUDGET);
    let records = episode_to_sft_records(&ep, &ep.rounds[0].plan, p).unwrap();
    let planners = records.iter().filter(|r| r.flavor == Flavor::PlannerSft).count();
    let executors = records.iter().filter(|r| r.flavor == Flavor::ExecutorSft).count();
    assert_eq!((planners, executors), (1, 8));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sft.jsonl");
    let manifest = write_dataset(&records, &path, 3).unwrap();
    assert_eq!(manifest.total, 9);
    assert!(lint_dataset(&path).unwrap().is_ok());
    assert_eq!(read_dataset(&path).unwrap(), records);
    let on_disk: Manifest =
        serde_json::from_str(&std::fs::read_to_string(Manifest::path_for(&path)).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn cot_targets_end_with_the_original_target() {
    let ep = eight_action_episode();
    let templates = TemplateSet::builtin();
    let p = Prompts::new(&templates, DEFAULT_HTML_BUDGET);
    let records = episode_to_sft_records(&ep, &ep.rounds[0].plan, p).unwrap();
    let mut replies: Vec<String> = (0..records.len())
        .map(|i| format!("The page offers one way forward, so record {i} follows it."))
        .collect();
    replies[3] = String::new();
    let (binding, _) = teacher(&replies);
    let report = annotate_cot(&records, &binding, p, 1).unwrap();
    assert_eq!(report.flagged, vec![3]);
    for (orig, cot) in records.iter().zip(&report.records) {
        assert!(cot.target.ends_with(&orig.target));
    }
    assert_eq!(report.records[0].flavor, Flavor::PlannerCot);
    assert_eq!(report.records[1].flavor, Flavor::ExecutorCot);
    assert_eq!(report.records[3].flavor, Flavor::ExecutorSft);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cot.jsonl");
    write_dataset(&report.records, &path, 0).unwrap();
    assert!(lint_dataset(&path).unwrap().is_ok());
}

#[test]
fn five_seeds_expand_to_twenty_pairs_in_two_calls() {
    let seeds = seed_pairs(5);
    let (binding, provider) = teacher(&[expansion_reply(0, 10), expansion_reply(1, 10), expansion_reply(2, 10)]);
    let templates = TemplateSet::builtin();
    let report = expand_plans(&seeds, &binding, &templates, &ExpansionOptions::new(20)).unwrap();
    assert_eq!(report.pairs.len(), 20);
    assert_eq!(report.calls, 2);
    assert_eq!(provider.call_count(), 2);
    let seed_ids: BTreeSet<&str> = seeds.iter().map(|s| s.id()).collect();
    let queries: BTreeSet<String> = report.pairs.iter().map(|p| p.query.text.to_lowercase()).collect();
    assert_eq!(queries.len(), 20);
    for pair in &report.pairs {
        assert_eq!(pair.query.origin, QueryOrigin::Synthetic);
        assert!(seed_ids.contains(pair.initial_state_ref.source.as_str()));
        assert!(matches!(pair.initial_state_ref.example, Some(1..=5)));
        let cited = seeds.iter().find(|s| s.id() == pair.initial_state_ref.source).unwrap();
        assert_eq!(pair.initial_html, cited.initial_html);
        pair.validate().unwrap();
    }
}

#[test]
fn expansion_drops_duplicates_and_bad_indices() {
    let seeds = seed_pairs(5);
    let mut first = expansion_reply(0, 10);
    first = first.replace("Initial HTML State:\n3", "Initial HTML State:\n9");
    let (binding, _) = teacher(&[first, expansion_reply(0, 10), expansion_reply(1, 10)]);
    let templates = TemplateSet::builtin();
    let report = expand_plans(&seeds, &binding, &templates, &ExpansionOptions::new(20)).unwrap();
    assert_eq!(report.out_of_range, 2);
    assert_eq!(report.duplicates, 8);
    assert_eq!(report.pairs.len(), 20);
    assert_eq!(report.calls, 3);
}

#[test]
fn expansion_needs_enough_seeds() {
    let (binding, _) = teacher(&[]);
    let templates = TemplateSet::builtin();
    let err = expand_plans(&seed_pairs(3), &binding, &templates, &ExpansionOptions::new(10)).unwrap_err();
    assert!(matches!(err, DatagenError::Precondition(_)));
}

fn hollister_seed() -> LabeledPair {
    let mut pair = seed_pairs(1).remove(0);
    pair.query = planact::datagen::QueryRecord::seed(
        "admin_hollister",
        Website::ShoppingAdmin,
        "Mark all Hollister shirts on sale",
    );
    pair.plan = Plan::from_pairs([
        ("Products are listed under Catalog.", "Search the product grid for Hollister shirts."),
        ("Bulk edits go through the actions menu.", "Select the shirts and choose 'Update attributes'."),
        ("The sale flag is an attribute.", "Set the sale attribute to yes and click 'Save'."),
    ]);
    LabeledPair {
        pair,
        label: "Class B".into(),
        reasoning: "Bulk attribute update.".into(),
        flagged: false,
    }
}

fn targeted_reply(query: &str, button: &str) -> String {
    format!(
        "## Data Pair 1\nUser Query:\n{query}\n\nInitial HTML State:\n1\n\nGlobal Plan:\n## Step 1\nReasoning: Products are listed under Catalog.\nStep: Search the product grid for Champion hoodies.\n\n## Step 2\nReasoning: Bulk edits go through the actions menu.\nStep: Select the hoodies and choose '{button}'.\n\n## Step 3\nReasoning: The sale flag is an attribute.\nStep: Set the sale attribute to yes and click 'Save'.\n"
    )
}

#[test]
fn hollister_seed_yields_a_pair_with_the_same_ui_phrasing() {
    let seed = hollister_seed();
    let mut renamed = hollister_seed();
    renamed.pair.query.id = "admin_hollister_2".into();
    let mut other = hollister_seed();
    other.label = "Other".into();
    let (binding, provider) = teacher(&[
        targeted_reply("Could you put every Champion hoodie on sale?", "Update attributes"),
        targeted_reply("Put Champion hoodies on sale", "Edit attributes"),
    ]);
    let templates = TemplateSet::builtin();
    let lexicon = vec!["Update attributes".to_string(), "Save".to_string()];
    let report = targeted_expand(&[seed, renamed, other], &binding, &templates, &lexicon, 1).unwrap();
    assert_eq!(provider.call_count(), 2);
    assert_eq!(report.pairs.len(), 1);
    let pair = &report.pairs[0];
    assert_eq!(pair.query.origin, QueryOrigin::TargetedSynthetic);
    assert_eq!(pair.query.seed_ids, vec!["admin_hollister".to_string()]);
    assert!(pair.plan.steps[1].step.contains("'Update attributes'"));
    assert_eq!(report.rejected.len(), 1);
    assert!(report.rejected[0].reason.contains("Update attributes"));
    let prompt = &provider.calls()[0].messages[0].content;
    assert!(prompt.contains("Mark all Hollister shirts on sale"));
}

#[test]
fn targeted_expansion_of_nothing_is_nothing() {
    let (binding, provider) = teacher(&[]);
    let templates = TemplateSet::builtin();
    let report = targeted_expand(&[], &binding, &templates, &[], 1).unwrap();
    assert!(report.pairs.is_empty() && report.rejected.is_empty());
    assert_eq!(provider.call_count(), 0);
}
