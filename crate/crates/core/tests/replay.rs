mod common;

use common::*;
use planact::domain::{ActionKind, Outcome};
use planact::dsl::{parse_action_text, render_action};
use planact::plan::{parse_plan, PlanVariant};
use planact::runtime::PlanningMode;

#[test]
fn map_episode_reproduces_the_appendix_trajectory() {
    let (ep, _) = run_lite(MAP_TASK, PlanningMode::Dynamic);
    assert_eq!(ep.outcome, Outcome::Success);
    assert_eq!(ep.rounds.len(), 5);
    for (i, round) in ep.rounds.iter().enumerate() {
        let expected = parse_action_text(&appendix(&format!("a1_map_executor_{}.txt", i + 1))).unwrap();
        assert_eq!(round.action, expected, "round {i}");
        assert_eq!(
            collapse_ws(&render_action(&round.action).unwrap()),
            collapse_ws(&render_action(&expected).unwrap())
        );
    }
    assert!(ep.final_message().unwrap().ends_with("is 0:34."));
    let initial = parse_plan(&appendix("a1_map_plan.md"), PlanVariant::Plain).unwrap();
    assert_eq!(ep.rounds[0].plan, initial);
}

#[test]
fn dynamic_mode_calls_each_model_as_expected() {
    for id in [MAP_TASK, CMU_TASK, SHIPPING_TASK, ORDERS_TASK] {
        let (ep, agent) = run_lite(id, PlanningMode::Dynamic);
        assert_eq!(ep.outcome, Outcome::Success, "{id}");
        let n = ep.rounds.len();
        assert_eq!(agent.planner.call_count(), 1, "{id}");
        assert_eq!(agent.replanner.call_count(), n - 1, "{id}");
        assert_eq!(agent.executor.call_count(), n, "{id}");
    }
}

#[test]
fn cmu_round_two_searches_with_the_refined_query() {
    let (ep, agent) = run_lite(CMU_TASK, PlanningMode::Dynamic);
    assert_eq!(ep.outcome, Outcome::Success);
    let refined = parse_plan(&appendix("a2_cmu_refined_plan.md"), PlanVariant::Plain).unwrap();
    assert_eq!(ep.rounds[2].plan, refined);
    assert!(ep.rounds[2].observation.html.contains("No results found"));
    let search = &ep.rounds[2].action;
    assert_eq!(search.kind, ActionKind::Search);
    assert_eq!(search.argument.as_deref(), Some("Library near CMU"));
    // Every action after the first is preceded by a replan.
    assert_eq!(agent.replanner.call_count(), ep.rounds.len() - 1);
    let third_executor_prompt = &agent.executor.calls()[2];
    let system = &third_executor_prompt.messages[0].content;
    assert!(system.contains("Refine the search query by focusing on libraries near CMU."));
}

#[test]
fn static_mode_never_replans() {
    let (ep, agent) = run_lite(MAP_TASK, PlanningMode::Static);
    assert_eq!(ep.outcome, Outcome::Success);
    assert_eq!(agent.planner.call_count(), 1);
    assert_eq!(agent.replanner.call_count(), 0);
    assert_eq!(agent.executor.call_count(), ep.rounds.len());
}

#[test]
fn every_lite_fixture_is_solvable() {
    let library = lite_library();
    assert_eq!(library.len(), 4);
    for task in library.tasks() {
        let f = library.get(&task.id).unwrap();
        f.validate().unwrap();
        let path = f.solve().unwrap_or_else(|| panic!("{} unsolvable", task.id));
        assert!(path.last().unwrap().is_exit());
    }
}
