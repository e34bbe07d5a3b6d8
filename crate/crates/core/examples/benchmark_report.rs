//! Runs a 165-task synthetic benchmark whose per-site outcomes match a known
//! breakdown, then prints the per-website table as markdown and CSV.
//!
//! cargo run --example benchmark_report [workers]

use std::sync::Arc;

use anyhow::Result;
use planact::env::FixtureLibrary;
use planact::eval::{
    aggregate, chain_fixture, chain_scripts, emit_report, reference_suite, run_benchmark,
    ReportFormat, REFERENCE_SITES,
};
use planact::llm::ModelBinding;
use planact::runtime::AgentConfig;

fn main() -> Result<()> {
    let workers = std::env::args()
        .nth(1)
        .map(|w| w.parse())
        .transpose()?
        .unwrap_or_else(planact::default_workers);

    let suite = reference_suite(REFERENCE_SITES);
    let mut library = FixtureLibrary::new();
    for task in &suite {
        library.insert(chain_fixture(task))?;
    }
    let (planner, replanner, executor) = chain_scripts(&suite).providers();
    let mut cfg = AgentConfig::new(
        ModelBinding::new(Arc::new(planner), "planner"),
        ModelBinding::new(Arc::new(executor), "executor"),
    )
    .with_replanner(ModelBinding::new(Arc::new(replanner), "replanner"));
    cfg.step_budget = 30;

    let tasks: Vec<_> = suite.iter().map(|t| t.task.clone()).collect();
    let episodes = run_benchmark(&tasks, &cfg, &library, workers);
    let report = aggregate(&episodes);
    println!("{}", emit_report(&report, ReportFormat::Markdown));
    println!("{}", emit_report(&report, ReportFormat::Csv));
    Ok(())
}
