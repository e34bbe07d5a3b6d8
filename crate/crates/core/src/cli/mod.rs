//! Command-line front end. Exit codes: 0 success, 1 operational failure,
//! 2 usage error.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::datagen::{
    self, annotate_cot, annotate_grounded_plan, annotate_replans, classify_failures,
    episode_to_sft_records, expand_plans, filter_feasible, generate_queries, lint_dataset,
    orm_filter, pair_to_planner_record, read_dataset, read_jsonl, targeted_expand, write_dataset,
    write_jsonl, write_quarantine, DatagenError, DatasetRecord, ExpansionOptions, Flavor,
    LabeledPair, PlanPair, QueryGenOptions, QueryRecord, Quarantined, DEFAULT_UI_LEXICON,
};
use crate::domain::{Episode, Website};
use crate::env::FixtureLibrary;
use crate::eval::{aggregate, emit_report, persist_episodes, run_benchmark, write_report, ReportFormat};
use crate::llm::TEMPLATE_VERSION;
use crate::par::par_map;
use crate::runtime::{read_episode, PlanningMode, Prompts};

pub use config::{AgentSection, Config, DatagenSection, ProviderSpec};

#[derive(Debug, Parser)]
#[command(name = "planact", version, about = "Planner/executor web agent, data pipeline and benchmark harness")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration (providers, templates, budgets).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every sampling step; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel episodes or batch items; defaults to available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one task from a fixture suite.
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        mode: Option<PlanningMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every task of a fixture suite and write episodes plus a report.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        mode: Option<PlanningMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize new queries from seed queries.
    GenQueries {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        calls_per_website: usize,
        /// Drop queries the judge finds infeasible.
        #[arg(long)]
        filter: bool,
    },
    /// Run the demonstrator agent on queries to collect episodes.
    Collect {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split episodes into accepted and rejected with the reward model.
    OrmFilter {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate successful episodes with grounded plans.
    AnnotatePlans {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write planner and executor training records here.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Build replanner records from episodes and their grounded plans.
    AnnotateReplans {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add reasoning traces to planner and executor records.
    AnnotateCot {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate new query-plan pairs from seed pairs.
    Expand {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write planner records for the new pairs here.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Label pairs with the failure class they would help fix.
    Classify {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        website: Website,
        #[arg(long)]
        out: PathBuf,
    },
    /// One varied pair per labeled seed.
    TargetedExpand {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// UI labels to preserve, one per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Check that every record's target parses under its grammar.
    LintDataset {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Aggregate episodes into the per-website table.
    Report {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Write report.md and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    config: Config,
    seed: u64,
    workers: usize,
}

impl Ctx {
    fn new(global: &GlobalArgs) -> Result<Self> {
        let config = match &global.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let seed = global.seed.or(config.seed).unwrap_or(0);
        let workers = global
            .workers
            .or(config.workers)
            .unwrap_or_else(crate::default_workers)
            .max(1);
        Ok(Ctx {
            config,
            seed,
            workers,
        })
    }

    fn library(&self, suite: &Path) -> Result<FixtureLibrary> {
        Ok(FixtureLibrary::load_dir(suite)
            .with_context(|| format!("loading fixtures from {}", suite.display()))?
            .with_mode(self.config.match_mode()?))
    }
}

/// `data/pairs.jsonl` -> `data/pairs.quarantine.jsonl`.
pub fn quarantine_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.quarantine.jsonl"))
}

/// Episodes from `<dir>/episodes/*.json`, or `<dir>/*.json` when there is no
/// `episodes` subdirectory, ordered by file name.
pub fn read_episodes(dir: &Path) -> Result<Vec<Episode>> {
    let sub = dir.join("episodes");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_episode(p).with_context(|| format!("reading episode {}", p.display())))
        .collect()
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    suite: String,
    mode: &'a str,
    seed: u64,
    template_version: &'a str,
    tasks: usize,
    successes: usize,
}

fn mode_name(mode: PlanningMode) -> &'static str {
    match mode {
        PlanningMode::Static => "static",
        PlanningMode::Dynamic => "dynamic",
    }
}

fn default_run_dir(command: &str, mode: PlanningMode, seed: u64) -> PathBuf {
    PathBuf::from("runs").join(format!("{command}-{}-s{seed}", mode_name(mode)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn save_quarantine(out: &Path, items: &[Quarantined]) -> Result<()> {
    write_quarantine(&quarantine_path(out), items)?;
    Ok(())
}

fn run_suite(
    ctx: &Ctx,
    command: &str,
    suite: &Path,
    only: Option<&str>,
    mode: Option<PlanningMode>,
    out: Option<PathBuf>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let cfg = ctx.config.agent(mode)?;
    let library = ctx.library(suite)?;
    let mut tasks = library.tasks();
    if let Some(id) = only {
        tasks.retain(|t| t.id == id);
        if tasks.is_empty() {
            bail!("task `{id}` is not in {}", suite.display());
        }
    }
    let run_dir = out.unwrap_or_else(|| default_run_dir(command, cfg.planning_mode, ctx.seed));
    let episodes = run_benchmark(&tasks, &cfg, &library, ctx.workers);
    persist_episodes(&run_dir.join("episodes"), &episodes)?;
    let report = aggregate(&episodes);
    write_report(&run_dir, &report)?;
    write_json(
        &run_dir.join("run.json"),
        &RunManifest {
            command,
            suite: suite.display().to_string(),
            mode: mode_name(cfg.planning_mode),
            seed: ctx.seed,
            template_version: TEMPLATE_VERSION,
            tasks: episodes.len(),
            successes: report.overall().map_or(0, |o| o.successes),
        },
    )?;
    for ep in &episodes {
        let reason = ep.failure_reason.as_deref().map(|r| format!(" ({r})")).unwrap_or_default();
        writeln!(stdout, "{}: {:?} in {} steps{reason}", ep.task.id, ep.outcome, ep.steps())?;
    }
    if command == "bench" {
        write!(stdout, "\n{}", emit_report(&report, ReportFormat::Markdown))?;
    }
    writeln!(stdout, "run directory: {}", run_dir.display())?;
    Ok(())
}

fn execute(ctx: &Ctx, command: Command, stdout: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.config;
    let html_budget = cfg.agent.html_budget;
    match command {
        Command::Run {
            suite,
            task,
            mode,
            out,
        } => run_suite(ctx, "run", &suite, Some(&task), mode, out, stdout),
        Command::Bench { suite, mode, out } => run_suite(ctx, "bench", &suite, None, mode, out, stdout),
        Command::GenQueries {
            seeds,
            out,
            calls_per_website,
            filter,
        } => {
            let seeds: Vec<QueryRecord> = read_jsonl(&seeds)?;
            let teacher = cfg.binding("teacher", &[])?;
            let templates = cfg.templates()?;
            let opts = QueryGenOptions {
                seeds_per_call: cfg.datagen.seeds_per_call,
                per_call: cfg.datagen.per_call,
                calls_per_website,
                seed: ctx.seed,
                ..QueryGenOptions::default()
            };
            let report = generate_queries(&seeds, &teacher, &templates, &opts)?;
            let mut queries = report.queries;
            let mut dropped = Vec::new();
            if filter {
                let judge = cfg.binding("judge", &["teacher"])?;
                let f = filter_feasible(&queries, &judge, &templates, ctx.workers)?;
                queries = f.kept;
                dropped = f.dropped;
            }
            write_jsonl(&out, &queries)?;
            save_quarantine(&out, &dropped)?;
            writeln!(
                stdout,
                "{} queries written ({} duplicates, {} skipped batches, {} infeasible)",
                queries.len(),
                report.duplicates,
                report.skipped_batches,
                dropped.len()
            )?;
            Ok(())
        }
        Command::Collect {
            queries,
            suite,
            out,
        } => {
            let queries: Vec<QueryRecord> = read_jsonl(&queries)?;
            let tasks: Vec<_> = queries.iter().map(QueryRecord::to_task).collect();
            let agent = cfg.agent(None)?;
            let library = ctx.library(&suite)?;
            let episodes = datagen::collect_trajectories(&tasks, &agent, &library, ctx.workers);
            persist_episodes(&out.join("episodes"), &episodes)?;
            let ok = episodes.iter().filter(|e| e.outcome == crate::domain::Outcome::Success).count();
            writeln!(stdout, "{} episodes collected, {ok} successful", episodes.len())?;
            Ok(())
        }
        Command::OrmFilter { episodes, out } => {
            let episodes = read_episodes(&episodes)?;
            let orm = cfg.binding("orm", &["teacher"])?;
            let report = orm_filter(
                &episodes,
                &orm,
                &cfg.templates()?,
                cfg.datagen.orm_threshold,
                html_budget,
                ctx.workers,
            )?;
            persist_episodes(&out.join("accepted"), &report.accepted)?;
            write_quarantine(&out.join("rejected.jsonl"), &report.rejected)?;
            writeln!(
                stdout,
                "{} accepted, {} rejected",
                report.accepted.len(),
                report.rejected.len()
            )?;
            Ok(())
        }
        Command::AnnotatePlans {
            episodes,
            out,
            dataset,
        } => {
            let episodes = read_episodes(&episodes)?;
            let teacher = cfg.binding("teacher", &[])?;
            let templates = cfg.templates()?;
            let p = Prompts::new(&templates, html_budget);
            let results = par_map(&episodes, ctx.workers, |ep| annotate_grounded_plan(ep, &teacher, p));
            let mut pairs = Vec::new();
            let mut records = Vec::new();
            let mut rejected = Vec::new();
            for (ep, result) in episodes.iter().zip(results) {
                match result {
                    Ok(pair) => {
                        if dataset.is_some() {
                            let g = pair.grounded.as_ref().expect("annotated pairs are grounded");
                            records.extend(episode_to_sft_records(ep, &g.plan, p)?);
                        }
                        pairs.push(pair);
                    }
                    Err(e @ (DatagenError::Precondition(_)
                    | DatagenError::PlanParse(_)
                    | DatagenError::GroundingInvalid(_))) => {
                        rejected.push(Quarantined::new("annotate_plans", ep.task.id.clone(), e.to_string(), ep));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            write_jsonl(&out, &pairs)?;
            save_quarantine(&out, &rejected)?;
            if let Some(path) = dataset {
                write_dataset(&records, &path, ctx.seed)?;
            }
            writeln!(stdout, "{} grounded pairs, {} rejected", pairs.len(), rejected.len())?;
            Ok(())
        }
        Command::AnnotateReplans {
            episodes,
            pairs,
            out,
        } => {
            let episodes: BTreeMap<String, Episode> = read_episodes(&episodes)?
                .into_iter()
                .map(|e| (e.task.id.clone(), e))
                .collect();
            let pairs: Vec<PlanPair> = read_jsonl(&pairs)?;
            let teacher = cfg.binding("teacher", &[])?;
            let templates = cfg.templates()?;
            let p = Prompts::new(&templates, html_budget);
            let mut records = Vec::new();
            let mut rejected = Vec::new();
            for pair in &pairs {
                let Some(g) = &pair.grounded else { continue };
                let Some(ep) = episodes.get(&g.episode) else {
                    rejected.push(Quarantined::new("annotate_replans", pair.id(), "episode not found", pair));
                    continue;
                };
                let ann = annotate_replans(ep, pair, &teacher, p)?;
                for (round, reason) in &ann.skipped {
                    rejected.push(Quarantined::new(
                        "annotate_replans",
                        format!("{}#{round}", ep.task.id),
                        reason.clone(),
                        serde_json::Value::Null,
                    ));
                }
                records.extend(ann.records);
            }
            let manifest = write_dataset(&records, &out, ctx.seed)?;
            save_quarantine(&out, &rejected)?;
            writeln!(stdout, "{} replanner records, {} skipped", manifest.total, rejected.len())?;
            Ok(())
        }
        Command::AnnotateCot { dataset, out } => {
            let records = read_dataset(&dataset)?;
            let (eligible, other): (Vec<DatasetRecord>, Vec<DatasetRecord>) = records
                .into_iter()
                .partition(|r| matches!(r.flavor, Flavor::PlannerSft | Flavor::ExecutorSft));
            let teacher = cfg.binding("teacher", &[])?;
            let templates = cfg.templates()?;
            let report = annotate_cot(&eligible, &teacher, Prompts::new(&templates, html_budget), ctx.workers)?;
            let flagged: Vec<Quarantined> = report
                .flagged
                .iter()
                .map(|&i| {
                    let r = &report.records[i];
                    Quarantined::new("annotate_cot", r.meta.source.clone(), r.meta.flags.join("; "), r)
                })
                .collect();
            let mut all = report.records;
            all.extend(other);
            let manifest = write_dataset(&all, &out, ctx.seed)?;
            save_quarantine(&out, &flagged)?;
            writeln!(stdout, "{} records written, {} without reasoning", manifest.total, flagged.len())?;
            Ok(())
        }
        Command::Expand {
            seeds,
            target,
            out,
            dataset,
        } => {
            let seeds: Vec<PlanPair> = read_jsonl(&seeds)?;
            let teacher = cfg.binding("teacher", &[])?;
            let templates = cfg.templates()?;
            let mut opts = ExpansionOptions::new(target);
            opts.seeds_per_call = cfg.datagen.seeds_per_call;
            opts.per_call = cfg.datagen.per_call;
            opts.example_html_budget = cfg.datagen.example_html_budget;
            if let Some(m) = cfg.datagen.max_calls {
                opts.max_calls = m;
            }
            opts.seed = ctx.seed;
            let report = expand_plans(&seeds, &teacher, &templates, &opts)?;
            write_jsonl(&out, &report.pairs)?;
            save_quarantine(&out, &report.rejected)?;
            if let Some(path) = dataset {
                let p = Prompts::new(&templates, html_budget);
                let records = report
                    .pairs
                    .iter()
                    .map(|pair| pair_to_planner_record(pair, p))
                    .collect::<Result<Vec<_>, _>>()?;
                write_dataset(&records, &path, ctx.seed)?;
            }
            writeln!(
                stdout,
                "{} pairs from {} calls ({} malformed, {} out of range, {} invalid plans, {} duplicates)",
                report.pairs.len(),
                report.calls,
                report.malformed,
                report.out_of_range,
                report.invalid_plans,
                report.duplicates
            )?;
            Ok(())
        }
        Command::Classify {
            pairs,
            website,
            out,
        } => {
            let pairs: Vec<PlanPair> = read_jsonl(&pairs)?;
            let teacher = cfg.binding("teacher", &[])?;
            let labeled = classify_failures(
                &pairs,
                website,
                &teacher,
                &cfg.templates()?,
                &cfg.rubrics()?,
                ctx.workers,
            )?;
            write_jsonl(&out, &labeled)?;
            let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
            for l in &labeled {
                *hist.entry(l.label.as_str()).or_default() += 1;
            }
            for (label, n) in hist {
                writeln!(stdout, "{label}: {n}")?;
            }
            Ok(())
        }
        Command::TargetedExpand {
            labeled,
            out,
            lexicon,
            dataset,
        } => {
            let seeds: Vec<LabeledPair> = read_jsonl(&labeled)?;
            let lexicon: Vec<String> = match lexicon {
                Some(path) => std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                None => cfg
                    .datagen
                    .lexicon
                    .clone()
                    .unwrap_or_else(|| DEFAULT_UI_LEXICON.iter().map(|s| s.to_string()).collect()),
            };
            let teacher = cfg.binding("teacher", &[])?;
            let templates = cfg.templates()?;
            let report = targeted_expand(&seeds, &teacher, &templates, &lexicon, ctx.workers)?;
            write_jsonl(&out, &report.pairs)?;
            save_quarantine(&out, &report.rejected)?;
            if let Some(path) = dataset {
                let p = Prompts::new(&templates, html_budget);
                let records = report
                    .pairs
                    .iter()
                    .map(|pair| pair_to_planner_record(pair, p))
                    .collect::<Result<Vec<_>, _>>()?;
                write_dataset(&records, &path, ctx.seed)?;
            }
            writeln!(stdout, "{} pairs, {} rejected", report.pairs.len(), report.rejected.len())?;
            Ok(())
        }
        Command::LintDataset { paths } => {
            let mut failed = false;
            for path in &paths {
                let report = lint_dataset(path)?;
                writeln!(stdout, "{}: {} records, {} errors", path.display(), report.total, report.errors.len())?;
                for (line, err) in &report.errors {
                    writeln!(stdout, "  line {line}: {err}")?;
                }
                failed |= !report.is_ok();
            }
            if failed {
                bail!("dataset lint failed");
            }
            Ok(())
        }
        Command::Report {
            episodes,
            format,
            out,
        } => {
            let report = aggregate(&read_episodes(&episodes)?);
            if let Some(dir) = out {
                write_report(&dir, &report)?;
            }
            write!(stdout, "{}", emit_report(&report, format))?;
            Ok(())
        }
    }
}

/// Parses `args` and runs the command, writing results to `stdout`. Returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    let result = Ctx::new(&cli.global).and_then(|ctx| execute(&ctx, cli.command, stdout));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
