//! Grows a handful of seed query/plan pairs into synthetic ones, then labels
//! pairs with a failure class and asks for targeted variants.
//!
//! cargo run --example expand_plans

use std::sync::Arc;

use anyhow::Result;
use planact::datagen::{
    expand_plans, targeted_expand, ExpansionOptions, LabeledPair, PlanPair, QueryRecord, StateRef,
    DEFAULT_UI_LEXICON,
};
use planact::domain::{Plan, Website};
use planact::llm::{ModelBinding, ScriptedProvider, TemplateSet};

fn seeds() -> Vec<PlanPair> {
    let queries = [
        "Show the best-selling products of 2022",
        "Create a refunds report for last quarter",
        "List the customers who joined in March",
        "Find orders over $500 placed in January",
        "Show the coupon usage report for May",
    ];
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| PlanPair {
            query: QueryRecord::seed(format!("admin_{i}"), Website::ShoppingAdmin, *q),
            initial_state_ref: StateRef { source: format!("admin_{i}"), example: None },
            initial_html: "<nav><a id=\"7\">Reports</a><a id=\"9\">Customers</a></nav>".into(),
            plan: Plan::from_pairs([
                ("The data lives under Reports.", "Open the 'Reports' menu and pick the matching report."),
                ("Reports need a period.", "Set the period and click 'Show Report'."),
            ]),
            grounded: None,
        })
        .collect()
}

/// What a teacher might answer to one expansion prompt.
fn teacher_batch(call: usize) -> String {
    (0..10)
        .map(|j| {
            format!(
                "## Data Pair {}\nUser Query:\nShow the tax report for period {call}.{j}\n\nInitial HTML State:\n{}\n\nGlobal Plan:\n## Step 1\nReasoning: Tax data lives under Reports.\nStep: Open the 'Reports' menu and pick the tax report.\n\n## Step 2\nReasoning: Reports need a period.\nStep: Set period {call}.{j} and click 'Show Report'.\n",
                j + 1,
                j % 5 + 1
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn main() -> Result<()> {
    let templates = TemplateSet::builtin();
    let teacher = Arc::new(ScriptedProvider::from_queue([teacher_batch(0), teacher_batch(1)]));
    let binding = ModelBinding::new(teacher.clone(), "teacher");

    let report = expand_plans(&seeds(), &binding, &templates, &ExpansionOptions::new(20))?;
    println!("{} new pairs from {} teacher calls", report.pairs.len(), report.calls);
    for p in report.pairs.iter().take(3) {
        println!(
            "  {} | {} | initial state from {} (example {:?})",
            p.query.id, p.query.text, p.initial_state_ref.source, p.initial_state_ref.example
        );
    }

    let seed = LabeledPair {
        pair: seeds().remove(1),
        label: "Class B".into(),
        reasoning: "Report generation with a date filter.".into(),
        flagged: false,
    };
    teacher.push(
        "## Data Pair 1\nUser Query:\nCould you build a refunds report covering Q2?\n\nInitial HTML State:\n1\n\nGlobal Plan:\n## Step 1\nReasoning: The data lives under Reports.\nStep: Open the 'Reports' menu and pick the refunds report.\n\n## Step 2\nReasoning: Reports need a period.\nStep: Set Q2 as the period and click 'Show Report'.\n",
    );
    let lexicon: Vec<String> = DEFAULT_UI_LEXICON.iter().map(|s| s.to_string()).collect();
    let targeted = targeted_expand(&[seed], &binding, &templates, &lexicon, 1)?;
    for p in &targeted.pairs {
        println!("targeted: {} (from {:?})", p.query.text, p.query.seed_ids);
    }
    println!("rejected: {}", targeted.rejected.len());
    Ok(())
}
