//! Runs one replay-fixture task with scripted planner, replanner and executor
//! models and prints each round.
//!
//! cargo run --example replay_episode [task_id] [static|dynamic]

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use planact::dsl::render_action;
use planact::env::{EnvFactory, FixtureLibrary};
use planact::llm::{ModelBinding, ScriptedProvider};
use planact::runtime::{run_episode, AgentConfig, PlanningMode};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let task_id = args.next().unwrap_or_else(|| "map_cmu_library_walk".into());
    let mode: PlanningMode = args
        .next()
        .unwrap_or_else(|| "dynamic".into())
        .parse()
        .map_err(|e: String| anyhow!(e))?;

    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let library = FixtureLibrary::load_dir(&root.join("fixtures/lite"))?;
    let task = library
        .tasks()
        .into_iter()
        .find(|t| t.id == task_id)
        .with_context(|| format!("no fixture for `{task_id}`"))?;

    let script = |name: &str| -> Result<Arc<ScriptedProvider>> {
        Ok(Arc::new(ScriptedProvider::load(&root.join("transcripts/lite").join(name))?))
    };
    let (planner, replanner, executor) =
        (script("planner.json")?, script("replanner.json")?, script("executor.json")?);
    let cfg = AgentConfig::new(
        ModelBinding::new(planner.clone(), "planner"),
        ModelBinding::new(executor.clone(), "executor"),
    )
    .with_replanner(ModelBinding::new(replanner.clone(), "replanner"))
    .with_mode(mode);

    let mut env = library.create(&task)?;
    let episode = run_episode(&cfg, &task, env.as_mut());

    println!("{}: {}\n", task.id, task.intent);
    for (i, round) in episode.rounds.iter().enumerate() {
        let first_step = round.plan.steps.first().map(|s| s.step.as_str()).unwrap_or("");
        println!("round {i}: plan starts with \"{first_step}\"");
        println!("{}\n", render_action(&round.action)?);
    }
    println!("outcome: {} after {} steps", episode.outcome, episode.steps());
    println!(
        "model calls: planner {}, replanner {}, executor {}",
        planner.call_count(),
        replanner.call_count(),
        executor.call_count()
    );
    Ok(())
}
