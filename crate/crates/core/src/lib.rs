//! Planner/executor web agents with dynamic replanning, a synthetic
//! training-data pipeline and a benchmark harness.

pub mod cli;
pub mod datagen;
pub mod domain;
pub mod dsl;
pub mod env;
pub mod eval;
pub mod llm;
mod par;
pub mod plan;
pub mod runtime;

pub use par::default_workers;
