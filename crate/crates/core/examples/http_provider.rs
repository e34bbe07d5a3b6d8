//! Sends one chat completion to an OpenAI-compatible endpoint, such as a
//! local vLLM server. Without `PLANACT_BASE_URL` it prints the request body
//! it would send instead.
//!
//! PLANACT_BASE_URL=http://localhost:8000/v1 PLANACT_MODEL=my-model \
//!   PLANACT_API_KEY=... cargo run --example http_provider

use std::sync::Arc;

use anyhow::Result;
use planact::llm::{HttpProvider, HttpProviderConfig, ModelBinding, TemplateSet};
use planact::runtime::Prompts;

fn main() -> Result<()> {
    let templates = TemplateSet::builtin();
    let messages = Prompts::new(&templates, 4_000).planner(
        "What is the top-1 best-selling product in 2022?",
        "<nav><a id=\"7\">Reports</a></nav><main>Dashboard</main>",
    )?;
    let model = std::env::var("PLANACT_MODEL").unwrap_or_else(|_| "planner".into());

    let Ok(base_url) = std::env::var("PLANACT_BASE_URL") else {
        let provider = HttpProvider::new(HttpProviderConfig::default())?;
        let request = ModelBinding::new(Arc::new(provider), model).request(messages);
        println!("PLANACT_BASE_URL is not set; this request would be sent:\n");
        println!("{}", serde_json::to_string_pretty(&request)?);
        return Ok(());
    };
    let provider = HttpProvider::new(HttpProviderConfig {
        base_url,
        api_key_env: Some("PLANACT_API_KEY".into()),
        ..HttpProviderConfig::default()
    })?;
    let binding = ModelBinding::new(Arc::new(provider), model);
    println!("{}", binding.complete(messages)?);
    Ok(())
}
