#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use planact::datagen::{PlanPair, QueryRecord, StateRef};
use planact::domain::{Episode, Plan, TaskSpec, Website};
use planact::env::FixtureLibrary;
use planact::llm::{ModelBinding, ScriptedProvider};
use planact::runtime::{run_episode, AgentConfig, PlanningMode};
use planact::env::EnvFactory;

pub const MAP_TASK: &str = "map_homewood_driving";
pub const CMU_TASK: &str = "map_cmu_library_walk";
pub const SHIPPING_TASK: &str = "admin_shipping_report";
pub const ORDERS_TASK: &str = "admin_monthly_order_counts";

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn appendix(name: &str) -> String {
    let path = crate_dir().join("transcripts/appendix").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn lite_library() -> FixtureLibrary {
    FixtureLibrary::load_dir(&crate_dir().join("fixtures/lite")).expect("lite fixtures load")
}

pub fn lite_config() -> PathBuf {
    crate_dir().join("configs/lite.toml")
}

/// Scripted providers for the lite suite, kept so calls can be counted.
pub struct LiteAgent {
    pub cfg: AgentConfig,
    pub planner: Arc<ScriptedProvider>,
    pub replanner: Arc<ScriptedProvider>,
    pub executor: Arc<ScriptedProvider>,
}

pub fn lite_agent(mode: PlanningMode) -> LiteAgent {
    let load = |name: &str| {
        Arc::new(
            ScriptedProvider::load(&crate_dir().join("transcripts/lite").join(name))
                .expect("script loads"),
        )
    };
    let planner = load("planner.json");
    let replanner = load("replanner.json");
    let executor = load("executor.json");
    let cfg = AgentConfig::new(
        ModelBinding::new(planner.clone(), "planner"),
        ModelBinding::new(executor.clone(), "executor"),
    )
    .with_replanner(ModelBinding::new(replanner.clone(), "replanner"))
    .with_mode(mode);
    LiteAgent {
        cfg,
        planner,
        replanner,
        executor,
    }
}

pub fn lite_task(library: &FixtureLibrary, id: &str) -> TaskSpec {
    library
        .tasks()
        .into_iter()
        .find(|t| t.id == id)
        .unwrap_or_else(|| panic!("no task {id}"))
}

/// Runs one lite task with fresh providers.
pub fn run_lite(id: &str, mode: PlanningMode) -> (Episode, LiteAgent) {
    let library = lite_library();
    let task = lite_task(&library, id);
    let agent = lite_agent(mode);
    let mut env = library.create(&task).expect("env");
    let ep = run_episode(&agent.cfg, &task, env.as_mut());
    (ep, agent)
}

pub fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `n` distinct seed pairs on the shopping admin site.
pub fn seed_pairs(n: usize) -> Vec<PlanPair> {
    (0..n)
        .map(|i| PlanPair {
            query: QueryRecord::seed(
                format!("seed-{i}"),
                Website::ShoppingAdmin,
                format!("Show the sales report for quarter {i}"),
            ),
            initial_state_ref: StateRef {
                source: format!("seed-{i}"),
                example: None,
            },
            initial_html: format!("<nav><a id=\"7\">Reports</a></nav><p>Seed {i}</p>"),
            plan: Plan::from_pairs([
                ("The dashboard has a Reports menu.", "Open the 'Reports' menu and choose the sales report."),
                ("The report needs a period.", "Set the period and click 'Show Report'."),
            ]),
            grounded: None,
        })
        .collect()
}

/// A teacher reply holding `n` data pairs that cite examples 1..=5.
pub fn expansion_reply(call: usize, n: usize) -> String {
    (0..n)
        .map(|j| {
            format!(
                "## Data Pair {}\nUser Query:\nList the refunds issued in week {call}-{j}\n\nInitial HTML State:\n{}\n\nGlobal Plan:\n## Step 1\nReasoning: Refunds live under the Reports menu.\nStep: Open the 'Reports' menu and choose the refunds report.\n\n## Step 2\nReasoning: The week must be entered as a date range.\nStep: Enter week {call}-{j} and click 'Show Report'.\n",
                j + 1,
                j % 5 + 1
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write(path: &Path, text: &str) {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

/// Action counts of the lite episodes under dynamic planning.
pub const LITE_STEPS: [(&str, usize); 4] = [
    (MAP_TASK, 5),
    (SHIPPING_TASK, 7),
    (CMU_TASK, 9),
    (ORDERS_TASK, 9),
];

/// A one-step grounded plan covering `n` actions.
pub fn whole_plan_reply(n: usize) -> String {
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    format!(
        "## Step 1\nReasoning: The task is a short, direct sequence on the current site.\nDescription: Every recorded action works toward the goal.\nStep: Complete the task and report the answer.\nActions: [{}]\n",
        ids.join(", ")
    )
}

/// Writes a config with the lite scripted agent plus a scripted teacher that
/// grounds every lite episode and answers three expansion calls.
pub fn write_pipeline_config(dir: &Path) -> PathBuf {
    let library = lite_library();
    let mut routes = serde_json::Map::new();
    for (id, n) in LITE_STEPS {
        let intent = lite_task(&library, id).intent;
        routes.insert(intent, serde_json::json!([whole_plan_reply(n)]));
    }
    let teacher = serde_json::json!({
        "routes": routes,
        "default": [expansion_reply(0, 10), expansion_reply(1, 10), expansion_reply(2, 10)],
    });
    write(&dir.join("teacher.json"), &serde_json::to_string_pretty(&teacher).unwrap());
    let lite = crate_dir().join("transcripts/lite");
    let config = format!(
        "seed = 7\nworkers = 2\n\n[agent]\nmode = \"dynamic\"\n\n{}\n[providers.teacher]\nkind = \"scripted\"\nscript = \"teacher.json\"\n",
        ["planner", "replanner", "executor"]
            .iter()
            .map(|r| format!(
                "[providers.{r}]\nkind = \"scripted\"\nscript = {:?}\n",
                lite.join(format!("{r}.json")).display().to_string()
            ))
            .collect::<Vec<_>>()
            .join("\n")
    );
    let path = dir.join("config.toml");
    write(&path, &config);
    write_jsonl_seeds(&dir.join("seeds.jsonl"));
    path
}

fn write_jsonl_seeds(path: &Path) {
    planact::datagen::write_jsonl(path, &seed_pairs(5)).unwrap();
}

/// Runs the CLI in-process, returning (exit code, stdout, stderr).
pub fn cli<S: AsRef<str>>(args: &[S]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<String> = std::iter::once("planact".to_string())
        .chain(args.iter().map(|a| a.as_ref().to_string()))
        .collect();
    let code = planact::cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// Every file under `root` as (relative path, bytes), sorted.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// The full offline pipeline through the CLI into `out`: bench, grounded
/// annotation with an SFT dataset, expansion with a planner dataset, lint.
pub fn run_pipeline(config: &Path, out: &Path) -> Result<(), String> {
    let c = config.display().to_string();
    let o = |p: &str| out.join(p).display().to_string();
    let suite = crate_dir().join("fixtures/lite").display().to_string();
    let seeds = config.parent().unwrap().join("seeds.jsonl").display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["--config".into(), c.clone(), "bench".into(), "--suite".into(), suite, "--out".into(), o("bench")],
        vec![
            "--config".into(), c.clone(), "annotate-plans".into(), "--episodes".into(), o("bench"),
            "--out".into(), o("pairs.jsonl"), "--dataset".into(), o("sft.jsonl"),
        ],
        vec![
            "--config".into(), c.clone(), "expand".into(), "--seeds".into(), seeds, "--target".into(),
            "20".into(), "--out".into(), o("expanded.jsonl"), "--dataset".into(), o("planner.jsonl"),
        ],
        vec!["lint-dataset".into(), o("sft.jsonl"), o("planner.jsonl")],
    ];
    for args in steps {
        let (code, stdout, stderr) = cli(&args);
        if code != 0 {
            return Err(format!("{} exited {code}: {stderr}{stdout}", args[2.min(args.len() - 1)]));
        }
    }
    Ok(())
}
