mod common;

use std::sync::Arc;

use planact::env::FixtureLibrary;
use planact::eval::{
    aggregate, chain_fixture, chain_scripts, emit_report, persist_episodes, reference_suite,
    run_benchmark, synthetic_episodes, write_report, ReportFormat, SiteOutcome, REFERENCE_SITES,
};
use planact::llm::ModelBinding;
use planact::runtime::{read_episode, AgentConfig, PlanningMode};

fn reference_run(workers: usize) -> (Vec<planact::domain::Episode>, Vec<planact::domain::Episode>) {
    let suite = reference_suite(REFERENCE_SITES);
    let mut library = FixtureLibrary::new();
    for t in &suite {
        library.insert(chain_fixture(t)).unwrap();
    }
    let (planner, replanner, executor) = chain_scripts(&suite).providers();
    let mut cfg = AgentConfig::new(
        ModelBinding::new(Arc::new(planner), "planner"),
        ModelBinding::new(Arc::new(executor), "executor"),
    )
    .with_replanner(ModelBinding::new(Arc::new(replanner), "replanner"))
    .with_mode(PlanningMode::Dynamic);
    cfg.step_budget = 30;
    let tasks: Vec<_> = suite.iter().map(|t| t.task.clone()).collect();
    (run_benchmark(&tasks, &cfg, &library, workers), synthetic_episodes(&suite))
}

#[test]
fn reference_suite_runs_to_the_expected_breakdown() {
    let (episodes, expected) = reference_run(4);
    assert_eq!(episodes.len(), 165);
    let report = aggregate(&episodes);
    assert_eq!(report, aggregate(&expected));
    let md = emit_report(&report, ReportFormat::Markdown);
    for rate in ["| 53.9 |", "| 53.3 |", "| 84.2 |", "| 48.6 |", "| 55.6 |", "| 46.2 |", "| 30.0 |"] {
        assert!(md.contains(rate), "{rate} missing from\n{md}");
    }
    for (ep, want) in episodes.iter().zip(&expected) {
        assert_eq!(ep.outcome, want.outcome, "{}", ep.task.id);
        assert_eq!(ep.trajectory(), want.trajectory(), "{}", ep.task.id);
    }
}

#[test]
fn persisted_episodes_read_back_identically() {
    let (episodes, _) = reference_run(2);
    let dir = tempfile::tempdir().unwrap();
    persist_episodes(dir.path(), &episodes).unwrap();
    write_report(dir.path(), &aggregate(&episodes)).unwrap();
    let files = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert_eq!(files, 165);
    let first = &episodes[0];
    let back = read_episode(&dir.path().join(format!("{}.json", first.task.id))).unwrap();
    assert_eq!(&back, first);
}

#[test]
fn worker_count_does_not_change_results() {
    let (a, _) = reference_run(1);
    let (b, _) = reference_run(6);
    assert_eq!(a, b);
}

#[test]
fn published_success_rates_come_out_of_site_counts() {
    let counts = [(16, 30), (16, 19), (17, 35), (25, 45), (12, 26), (3, 10)];
    for (&(ok, n), site) in counts.iter().zip(REFERENCE_SITES) {
        assert_eq!((site.successes, site.tasks), (ok, n));
    }
    let only_map = [SiteOutcome { ..REFERENCE_SITES[4] }];
    let r = aggregate(&synthetic_episodes(&reference_suite(&only_map)));
    assert_eq!(r.overall().unwrap().cells()[5], "46.2");
}
