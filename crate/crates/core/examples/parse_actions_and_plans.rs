//! Parses executor actions and plans, renders them back, and checks how a
//! grounded plan covers a trajectory.
//!
//! cargo run --example parse_actions_and_plans

use anyhow::Result;
use planact::domain::validate_action;
use planact::dsl::{parse_action_text, parse_numbered_trajectory, render_action};
use planact::plan::{parse_plan, render_plan, validate_grounding, PlanVariant};

const EXECUTOR_OUTPUT: &str = r#"# Element: the 'Show Report' button
do(action="Click", element="16")"#;

const TRAJECTORY: &str = r#"Action 0:
# Element: the 'Reports' tab
do(action="Click", element="7")

Action 1:
do(action="Type", argument="08/05/2022", element="24")

Action 2:
exit(message="Done.")"#;

const GROUNDED_PLAN: &str = "## Step 1
Reasoning: The report filters are behind the Reports tab.
Description: Open the report and set the start date.
Step: Open the shipping report and enter the date.
Actions: [0, 1]

## Step 2
Reasoning: Nothing else is needed.
Description: Finish.
Step: Exit with a confirmation.
Actions: [2]
";

fn main() -> Result<()> {
    let action = parse_action_text(EXECUTOR_OUTPUT)?;
    println!("parsed: {action:?}");
    println!("valid: {}", validate_action(&action).is_ok());
    println!("rendered:\n{}\n", render_action(&action)?);

    let trajectory = parse_numbered_trajectory(TRAJECTORY)?;
    let plan = parse_plan(GROUNDED_PLAN, PlanVariant::Grounded)?;
    println!("grounding: {}", validate_grounding(&plan, &trajectory));

    let mut split = plan.clone();
    split.steps[0].action_indices = Some(vec![0, 2]);
    split.steps[1].action_indices = Some(vec![1]);
    println!("bad grounding: {}", validate_grounding(&split, &trajectory));

    let plain = parse_plan(GROUNDED_PLAN, PlanVariant::Plain)?;
    let mut stripped = plain.clone();
    for s in &mut stripped.steps {
        s.description = None;
        s.action_indices = None;
    }
    println!("\nplanner-facing plan:\n{}", render_plan(&stripped, PlanVariant::Plain)?);

    match parse_plan("Reasoning: no header\nStep: x", PlanVariant::Plain) {
        Ok(_) => println!("unexpectedly parsed"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
