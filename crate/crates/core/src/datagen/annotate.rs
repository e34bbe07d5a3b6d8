use super::{
    plain_plan, render_transcript, DatagenError, DatasetRecord, Flavor, GroundedPlan, PlanPair,
    QueryRecord, RecordMeta, StateRef,
};
use crate::datagen::dataset::lint_record;
use crate::domain::{Action, Episode, Outcome, Plan};
use crate::dsl::{render_action, render_call, render_numbered_actions, render_numbered_trajectory};
use crate::env::simplify_html;
use crate::llm::{names, ChatMessage, ModelBinding, Slots};
use crate::par::par_map;
use crate::plan::{
    parse_plan, render_plan, split_plan_preamble, validate_grounding, validate_grounding_len,
    PlanVariant,
};
use crate::runtime::{action_text, render_plan_text, HistoryItem, Prompts};

fn plan_body(text: &str) -> &str {
    split_plan_preamble(text).map(|(_, rest)| rest).unwrap_or(text)
}

fn history<'a>(plans: &'a [Plan], actions: &'a [Action]) -> Vec<HistoryItem<'a>> {
    plans
        .iter()
        .zip(actions)
        .map(|(plan, action)| HistoryItem { plan, action })
        .collect()
}

fn target_action(action: &Action) -> String {
    render_action(action).unwrap_or_else(|_| render_call(action))
}

/// Asks the teacher to split a successful episode's trajectory into a
/// grounded plan. One corrective re-ask is allowed for a parse error or a
/// grounding violation.
pub fn annotate_grounded_plan(
    episode: &Episode,
    teacher: &ModelBinding,
    prompts: Prompts<'_>,
) -> Result<PlanPair, DatagenError> {
    if episode.outcome != Outcome::Success || episode.rounds.is_empty() {
        return Err(DatagenError::Precondition(format!(
            "episode `{}` is not a successful trajectory",
            episode.task.id
        )));
    }
    let t = prompts.templates;
    let trajectory = episode.trajectory();
    let initial_html = &episode.rounds[0].observation.html;
    let mut messages = vec![
        ChatMessage::system(t.render(
            names::ANNOTATOR_SYSTEM,
            &Slots::new().set(
                "in_context_examples",
                t.render(names::ANNOTATOR_EXAMPLES, &Slots::new())?,
            ),
        )?),
        ChatMessage::user(t.render(
            names::ANNOTATOR_USER,
            &Slots::new()
                .set("goal_description", episode.task.intent.as_str())
                .set("initial_html_state", simplify_html(initial_html, prompts.html_budget))
                .set("trajectory", render_numbered_trajectory(&trajectory)),
        )?),
    ];

    for attempt in 0..2 {
        let raw = teacher.complete(messages.clone())?;
        let correction = match parse_plan(plan_body(&raw), PlanVariant::Grounded) {
            Err(e) if attempt == 0 => t.render(
                names::PLAN_FORMAT_REMINDER,
                &Slots::new().set("error", e.to_string()),
            )?,
            Err(e) => return Err(e.into()),
            Ok(plan) => {
                let report = validate_grounding(&plan, &trajectory);
                if report.is_ok() {
                    return Ok(PlanPair {
                        query: QueryRecord::seed(
                            episode.task.id.clone(),
                            episode.task.website,
                            episode.task.intent.clone(),
                        ),
                        initial_state_ref: StateRef {
                            source: episode.task.id.clone(),
                            example: None,
                        },
                        initial_html: initial_html.clone(),
                        plan: plain_plan(&plan),
                        grounded: Some(GroundedPlan {
                            plan,
                            episode: episode.task.id.clone(),
                            trajectory,
                        }),
                    });
                }
                if attempt > 0 {
                    return Err(DatagenError::GroundingInvalid(report));
                }
                t.render(
                    names::GROUNDING_CORRECTION,
                    &Slots::new()
                        .set("violation", report.to_string())
                        .set("last_index", (trajectory.len() - 1).to_string()),
                )?
            }
        };
        messages.push(ChatMessage::assistant(raw));
        messages.push(ChatMessage::user(correction));
    }
    unreachable!("the second attempt always returns")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplanAnnotation {
    pub records: Vec<DatasetRecord>,
    /// Rounds without a record, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Builds one replanner record per round after the first. For round `t` the
/// teacher sees its earlier plans as assistant turns, the current html and
/// the actions still to come, and writes a plan over those actions.
pub fn annotate_replans(
    episode: &Episode,
    pair: &PlanPair,
    teacher: &ModelBinding,
    prompts: Prompts<'_>,
) -> Result<ReplanAnnotation, DatagenError> {
    let grounded = pair
        .grounded
        .as_ref()
        .ok_or_else(|| DatagenError::Precondition(format!("pair `{}` is not grounded", pair.id())))?;
    let report = validate_grounding(&grounded.plan, &grounded.trajectory);
    if !report.is_ok() {
        return Err(DatagenError::GroundingInvalid(report));
    }
    let actions: Vec<Action> = episode.rounds.iter().map(|r| r.action.clone()).collect();
    if actions != grounded.trajectory.actions {
        return Err(DatagenError::Precondition(format!(
            "episode `{}` does not match the grounded trajectory",
            episode.task.id
        )));
    }
    let t = prompts.templates;
    let system = ChatMessage::system(t.render(
        names::REPLAN_ANNOTATOR_SYSTEM,
        &Slots::new().set(
            "examples",
            t.render(names::REPLAN_ANNOTATOR_EXAMPLES, &Slots::new())?,
        ),
    )?);
    let n = actions.len();
    let mut teacher_turns = vec![render_plan(&grounded.plan, PlanVariant::Grounded)?];
    let mut plans = vec![plain_plan(&grounded.plan)];
    let mut out = ReplanAnnotation::default();

    for round in 1..n {
        let mut messages = vec![system.clone()];
        for (r, turn) in teacher_turns.iter().enumerate() {
            messages.push(ChatMessage::user(t.render(
                names::REPLAN_ANNOTATOR_PREVIOUS,
                &Slots::new()
                    .set("index", r.to_string())
                    .set("previous_action", action_text(&actions[r])),
            )?));
            messages.push(ChatMessage::assistant(turn.clone()));
        }
        let html = &episode.rounds[round].observation.html;
        messages.push(ChatMessage::user(t.render(
            names::REPLAN_ANNOTATOR_CURRENT,
            &Slots::new()
                .set("user_query", episode.task.intent.as_str())
                .set("round", round.to_string())
                .set("current_html_state", simplify_html(html, prompts.html_budget))
                .set("future_trajectory", render_numbered_actions(&actions[round..], 0)),
        )?));

        let raw = teacher.complete(messages)?;
        let parsed = parse_plan(plan_body(&raw), PlanVariant::Plain)
            .map_err(|e| e.to_string())
            .and_then(|plan| {
                let indexed = plan.steps.iter().filter(|s| s.action_indices.is_some()).count();
                if indexed == 0 {
                    return Ok((plan, vec!["ungrounded".to_string()]));
                }
                let report = validate_grounding_len(&plan, n - round);
                if report.is_ok() {
                    Ok((plan, Vec::new()))
                } else {
                    Err(report.to_string())
                }
            });
        let (plan, flags) = match parsed {
            Ok(p) => p,
            Err(reason) => {
                tracing::warn!(task = %episode.task.id, round, %reason, "replan round skipped");
                out.skipped.push((round, reason));
                teacher_turns.push(teacher_turns[round - 1].clone());
                plans.push(plans[round - 1].clone());
                continue;
            }
        };
        let target_plan = plain_plan(&plan);
        let inputs = prompts.replanner(
            &episode.task.intent,
            &history(&plans, &actions[..round]),
            html,
        )?;
        out.records.push(DatasetRecord {
            flavor: Flavor::ReplannerSft,
            messages: inputs,
            target: render_plan_text(&target_plan),
            meta: RecordMeta {
                source: episode.task.id.clone(),
                origin: "replan_annotation".into(),
                round: Some(round),
                original_target: None,
                flags,
            },
        });
        teacher_turns.push(raw.trim().to_string());
        plans.push(target_plan);
    }
    Ok(out)
}

/// One planner record for a pair: the query and initial html in, the plain
/// plan out.
pub fn pair_to_planner_record(
    pair: &PlanPair,
    prompts: Prompts<'_>,
) -> Result<DatasetRecord, DatagenError> {
    Ok(DatasetRecord {
        flavor: Flavor::PlannerSft,
        messages: prompts.planner(&pair.query.text, &pair.initial_html)?,
        target: render_plan_text(&plain_plan(&pair.plan)),
        meta: RecordMeta {
            source: pair.id().to_string(),
            origin: pair.query.origin.as_str().to_string(),
            ..RecordMeta::default()
        },
    })
}

/// One planner record and one executor record per action. Every executor
/// record sees `plan` as its global plan.
pub fn episode_to_sft_records(
    episode: &Episode,
    plan: &Plan,
    prompts: Prompts<'_>,
) -> Result<Vec<DatasetRecord>, DatagenError> {
    let first = episode.rounds.first().ok_or_else(|| {
        DatagenError::Precondition(format!("episode `{}` has no rounds", episode.task.id))
    })?;
    let plan = plain_plan(plan);
    let meta = |round: Option<usize>| RecordMeta {
        source: episode.task.id.clone(),
        origin: "episode".into(),
        round,
        ..RecordMeta::default()
    };
    let mut records = vec![DatasetRecord {
        flavor: Flavor::PlannerSft,
        messages: prompts.planner(&episode.task.intent, &first.observation.html)?,
        target: render_plan_text(&plan),
        meta: meta(None),
    }];
    let actions: Vec<Action> = episode.rounds.iter().map(|r| r.action.clone()).collect();
    let plans = vec![plan.clone(); actions.len()];
    for (t, round) in episode.rounds.iter().enumerate() {
        records.push(DatasetRecord {
            flavor: Flavor::ExecutorSft,
            messages: prompts.executor(
                &episode.task.intent,
                &plan,
                &history(&plans[..t], &actions[..t]),
                &round.observation.html,
            )?,
            target: target_action(&round.action),
            meta: meta(Some(t)),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CotReport {
    pub records: Vec<DatasetRecord>,
    /// Indices of records kept without a reasoning trace.
    pub flagged: Vec<usize>,
}

fn garbled(trace: &str, target: &str) -> Option<&'static str> {
    if trace.is_empty() {
        return Some("empty trace");
    }
    let bad_line = trace.lines().any(|l| {
        let l = l.trim_start();
        l.starts_with("## Step") || l.starts_with("do(") || l.starts_with("exit(")
    });
    if bad_line || trace.contains(target.trim()) {
        return Some("trace repeats the target");
    }
    None
}

/// Prepends a teacher-written reasoning trace to each target. The original
/// target is kept in the record's metadata.
pub fn annotate_cot(
    records: &[DatasetRecord],
    teacher: &ModelBinding,
    prompts: Prompts<'_>,
    workers: usize,
) -> Result<CotReport, DatagenError> {
    if let Some(r) = records
        .iter()
        .find(|r| !matches!(r.flavor, Flavor::PlannerSft | Flavor::ExecutorSft))
    {
        return Err(DatagenError::Precondition(format!(
            "reasoning annotation needs planner or executor records, got {}",
            r.flavor.as_str()
        )));
    }
    let t = prompts.templates;
    let system = t.render(names::COT_ANNOTATOR_SYSTEM, &Slots::new())?;
    let replies = par_map(records, workers, |r| -> Result<String, DatagenError> {
        let user = t.render(
            names::COT_ANNOTATOR_USER,
            &Slots::new()
                .set("input", render_transcript(&r.messages))
                .set("target", r.target.as_str()),
        )?;
        Ok(teacher.complete(vec![ChatMessage::system(system.clone()), ChatMessage::user(user)])?)
    });
    let mut out = CotReport::default();
    for (i, (record, reply)) in records.iter().zip(replies).enumerate() {
        let reply = reply?;
        let trace = reply.trim();
        let annotated = match garbled(trace, &record.target) {
            Some(reason) => Err(reason.to_string()),
            None => {
                let mut meta = record.meta.clone();
                meta.original_target = Some(record.target.clone());
                let candidate = DatasetRecord {
                    flavor: if record.flavor == Flavor::PlannerSft {
                        Flavor::PlannerCot
                    } else {
                        Flavor::ExecutorCot
                    },
                    messages: record.messages.clone(),
                    target: format!("{trace}\n\n{}", record.target),
                    meta,
                };
                lint_record(&candidate).map(|_| candidate)
            }
        };
        match annotated {
            Ok(r) => out.records.push(r),
            Err(reason) => {
                tracing::warn!(index = i, %reason, "record kept without reasoning");
                let mut kept = record.clone();
                kept.meta.flags.push(format!("cot_missing: {reason}"));
                out.records.push(kept);
                out.flagged.push(i);
            }
        }
    }
    Ok(out)
}
