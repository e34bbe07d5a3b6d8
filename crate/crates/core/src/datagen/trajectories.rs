use std::sync::OnceLock;

use regex::Regex;

use super::{DatagenError, Quarantined};
use crate::domain::{Episode, TaskSpec};
use crate::dsl::render_numbered_trajectory;
use crate::env::{simplify_html, EnvFactory};
use crate::llm::{names, ChatMessage, ModelBinding, Slots, TemplateSet};
use crate::par::par_map;
use crate::runtime::{run_tasks, AgentConfig};

/// Runs the demonstrator agent on every task. Failures stay in the output
/// with their outcome labels.
pub fn collect_trajectories(
    tasks: &[TaskSpec],
    cfg: &AgentConfig,
    factory: &dyn EnvFactory,
    workers: usize,
) -> Vec<Episode> {
    run_tasks(cfg, tasks, factory, workers)
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(YES|NO)\b").expect("static regex"))
}

/// The last standalone upper-case YES or NO in the reply.
pub fn parse_orm_verdict(text: &str) -> Option<bool> {
    verdict_re()
        .find_iter(text)
        .last()
        .map(|m| m.as_str() == "YES")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrmReport {
    pub accepted: Vec<Episode>,
    /// Rejected episodes with the reason; unparseable replies land here too.
    pub rejected: Vec<Quarantined>,
}

/// Scores each episode with the reward model and keeps those scoring at
/// least `threshold` (YES = 1, NO = 0).
pub fn orm_filter(
    episodes: &[Episode],
    orm: &ModelBinding,
    templates: &TemplateSet,
    threshold: u8,
    html_budget: usize,
    workers: usize,
) -> Result<OrmReport, DatagenError> {
    let replies = par_map(episodes, workers, |ep| -> Result<Option<String>, DatagenError> {
        let Some(last) = ep.rounds.last() else {
            return Ok(None);
        };
        let prompt = templates.render(
            names::ORM_JUDGE,
            &Slots::new()
                .set("intent", ep.task.intent.as_str())
                .set("trajectory", render_numbered_trajectory(&ep.trajectory()))
                .set("final_html", simplify_html(&last.observation.html, html_budget)),
        )?;
        Ok(Some(orm.complete(vec![ChatMessage::user(prompt)])?))
    });
    let mut report = OrmReport::default();
    for (ep, reply) in episodes.iter().zip(replies) {
        let id = ep.task.id.clone();
        let reason = match reply? {
            None => Some("empty trajectory".to_string()),
            Some(text) => match parse_orm_verdict(&text) {
                None => Some("flagged: no YES/NO verdict in reward model reply".to_string()),
                Some(yes) if u8::from(yes) >= threshold => None,
                Some(_) => Some("reward model verdict NO".to_string()),
            },
        };
        match reason {
            None => report.accepted.push(ep.clone()),
            Some(r) => report.rejected.push(Quarantined::new("orm_filter", id, r, ep)),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::{Action, Observation, Outcome, Plan, Round, Website};
    use crate::llm::ScriptedProvider;

    fn episode(id: &str, intent: &str) -> Episode {
        let round = Round {
            observation: Observation::new("<div id=\"1\">x</div>", false),
            plan: Plan::from_pairs([("r", "s")]),
            action: Action::exit("done"),
            raw_planner_output: String::new(),
            raw_executor_output: String::new(),
            planner_preamble: None,
            executor_preamble: None,
        };
        Episode::new(TaskSpec::new(id, Website::Map, intent), vec![round], Outcome::Success)
    }

    #[test]
    fn last_token_wins() {
        assert_eq!(parse_orm_verdict("NO wait, the answer is\nYES"), Some(true));
        assert_eq!(parse_orm_verdict("YES it looked right but\nNO"), Some(false));
        assert_eq!(parse_orm_verdict("maybe, not sure, NOPE"), None);
        assert_eq!(parse_orm_verdict("yes"), None);
    }

    #[test]
    fn scripted_verdicts_split_two_to_one() {
        let p = Arc::new(ScriptedProvider::new());
        p.push_route("task alpha", "fine\nYES");
        p.push_route("task beta", "wrong page\nNO");
        p.push_route("task gamma", "YES");
        let orm = ModelBinding::new(p, "orm");
        let eps = vec![episode("a", "task alpha"), episode("b", "task beta"), episode("c", "task gamma")];
        let r = orm_filter(&eps, &orm, &TemplateSet::builtin(), 1, 1000, 3).unwrap();
        assert_eq!((r.accepted.len(), r.rejected.len()), (2, 1));
        assert_eq!(r.rejected[0].id, "b");
    }

    #[test]
    fn unparseable_reply_is_rejected_with_flag() {
        let p = Arc::new(ScriptedProvider::from_queue(["no idea"]));
        let orm = ModelBinding::new(p, "orm");
        let r = orm_filter(&[episode("a", "t")], &orm, &TemplateSet::builtin(), 1, 1000, 1).unwrap();
        assert!(r.accepted.is_empty());
        assert!(r.rejected[0].reason.starts_with("flagged"));
    }

    #[test]
    fn empty_input_and_all_yes() {
        let p = Arc::new(ScriptedProvider::from_queue(["YES", "YES"]));
        let orm = ModelBinding::new(p, "orm");
        let r = orm_filter(&[], &orm, &TemplateSet::builtin(), 1, 1000, 1).unwrap();
        assert_eq!(r, OrmReport::default());
        let eps = vec![episode("a", "t1"), episode("b", "t2")];
        let r = orm_filter(&eps, &orm, &TemplateSet::builtin(), 1, 1000, 1).unwrap();
        assert_eq!(r.accepted, eps);
    }
}
