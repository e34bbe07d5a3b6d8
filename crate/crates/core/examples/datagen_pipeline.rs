//! Turns successful trajectories into training data: a teacher grounds each
//! episode into a plan, the episode becomes planner and executor records,
//! replans are annotated per round, and the dataset is written and linted.
//!
//! The teacher here is scripted; point a config at a real endpoint to use a
//! live model instead.
//!
//! cargo run --example datagen_pipeline [out_dir]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Result;
use planact::datagen::{
    annotate_grounded_plan, annotate_replans, episode_to_sft_records, lint_dataset, write_dataset,
};
use planact::env::FixtureLibrary;
use planact::llm::{ModelBinding, ScriptedProvider, TemplateSet};
use planact::runtime::{run_tasks, AgentConfig, Prompts, DEFAULT_HTML_BUDGET};

fn script(root: &Path, name: &str) -> Result<ModelBinding> {
    let p = ScriptedProvider::load(&root.join("transcripts/lite").join(name))?;
    Ok(ModelBinding::new(Arc::new(p), name.trim_end_matches(".json")))
}

/// A teacher answer covering all `n` actions with two steps.
fn grounded_answer(n: usize) -> String {
    let head: Vec<String> = (0..n - 1).map(|i| i.to_string()).collect();
    format!(
        "## Step 1\nReasoning: Work toward the goal on the current site.\nDescription: Navigation and input.\nStep: Carry out the task.\nActions: [{}]\n\n## Step 2\nReasoning: The answer is on screen.\nDescription: Report the result.\nStep: Exit with the answer.\nActions: [{}]\n",
        head.join(", "),
        n - 1
    )
}

/// A replanner answer for a round with `n` remaining actions.
fn replan_answer(n: usize) -> String {
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    format!(
        "## Step 1\nReasoning: The remaining actions finish the task.\nStep: Finish the task.\nActions: [{}]\n",
        ids.join(", ")
    )
}

fn main() -> Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("planact-datagen"));

    let library = FixtureLibrary::load_dir(&root.join("fixtures/lite"))?;
    let cfg = AgentConfig::new(script(root, "planner.json")?, script(root, "executor.json")?)
        .with_replanner(script(root, "replanner.json")?);
    let episodes = run_tasks(&cfg, &library.tasks(), &library, 1);

    let templates = TemplateSet::builtin();
    let prompts = Prompts::new(&templates, DEFAULT_HTML_BUDGET);
    let mut records = Vec::new();
    for ep in episodes.iter().filter(|e| e.outcome == planact::domain::Outcome::Success) {
        let n = ep.steps();
        let teacher = Arc::new(ScriptedProvider::from_queue([grounded_answer(n)]));
        for t in 1..n {
            teacher.push(replan_answer(n - t));
        }
        let binding = ModelBinding::new(teacher.clone(), "teacher");
        let pair = annotate_grounded_plan(ep, &binding, prompts)?;
        let plan = &pair.grounded.as_ref().expect("grounded").plan;
        let sft = episode_to_sft_records(ep, plan, prompts)?;
        let replans = annotate_replans(ep, &pair, &binding, prompts)?;
        println!(
            "{}: {} actions -> {} SFT records, {} replanner records",
            ep.task.id,
            n,
            sft.len(),
            replans.records.len()
        );
        records.extend(sft);
        records.extend(replans.records);
    }

    let path = out.join("dataset.jsonl");
    let manifest = write_dataset(&records, &path, 0)?;
    println!("\nwrote {} records to {}", manifest.total, path.display());
    for (flavor, n) in &manifest.counts {
        println!("  {flavor}: {n}");
    }
    let lint = lint_dataset(&path)?;
    println!("lint: {} records, {} errors", lint.total, lint.errors.len());
    Ok(())
}
