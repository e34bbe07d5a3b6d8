//! Drives an episode through the line-delimited JSON adapter protocol. A
//! replay fixture is served over TCP on localhost, and the agent talks to it
//! as it would to a live browser bridge.
//!
//! cargo run --example adapter_env

use std::io::BufReader;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use planact::env::{serve_adapter, AdapterClient, Environment, FixtureLibrary};
use planact::llm::{ModelBinding, ScriptedProvider};
use planact::runtime::{run_episode, AgentConfig};

fn main() -> Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let library = FixtureLibrary::load_dir(&root.join("fixtures/lite"))?;
    let task = library
        .tasks()
        .into_iter()
        .find(|t| t.id == "map_homewood_driving")
        .context("map fixture missing")?;

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = format!("tcp://{}", listener.local_addr()?);
    let server = std::thread::spawn(move || -> std::io::Result<()> {
        let (stream, _) = listener.accept()?;
        serve_adapter(&library, BufReader::new(stream.try_clone()?), stream)
    });

    let script = |name: &str| -> Result<ModelBinding> {
        let p = ScriptedProvider::load(&root.join("transcripts/lite").join(name))?;
        Ok(ModelBinding::new(Arc::new(p), name))
    };
    let cfg = AgentConfig::new(script("planner.json")?, script("executor.json")?)
        .with_replanner(script("replanner.json")?);

    let mut env = AdapterClient::connect(&endpoint)?;
    println!("connected to {endpoint}");
    let episode = run_episode(&cfg, &task, &mut env);
    println!(
        "{}: {} in {} steps, environment judged success = {:?}",
        task.id,
        episode.outcome,
        episode.steps(),
        env.success()
    );
    println!("final message: {}", episode.final_message().unwrap_or("-"));
    drop(env);
    server.join().expect("server thread")?;
    Ok(())
}
