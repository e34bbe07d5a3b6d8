//! Benchmark harness: run suites, aggregate binary success per website and
//! render the breakdown table.

mod suite;

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Episode, Outcome, TaskSpec, Website};
use crate::env::EnvFactory;
use crate::runtime::{run_tasks, write_episode, AgentConfig};

pub use suite::{
    chain_fixture, chain_scripts, reference_suite, synthetic_episodes, ChainScripts, SiteOutcome,
    SuiteTask, REFERENCE_SITES,
};

/// Footer note stating how steps are counted.
pub const STEPS_FOOTNOTE: &str = "Steps count executor actions, including the final Exit.";

/// Marker for averages over an empty set.
pub const UNDEFINED: &str = "n/a";

pub const COLUMNS: [&str; 6] = [
    "Website",
    "# Tasks",
    "Avg. Steps (All)",
    "Avg. Steps (Success)",
    "Avg. Steps (Fail)",
    "Success Rate (%)",
];

const CSV_COLUMNS: [&str; 6] = [
    "website",
    "tasks",
    "avg_steps_all",
    "avg_steps_success",
    "avg_steps_fail",
    "success_rate",
];

/// Runs every task, at most `workers` at a time. Tasks that cannot be set up
/// become Failure episodes; nothing aborts the suite.
pub fn run_benchmark(
    tasks: &[TaskSpec],
    cfg: &AgentConfig,
    factory: &dyn EnvFactory,
    workers: usize,
) -> Vec<Episode> {
    run_tasks(cfg, tasks, factory, workers)
}

/// Writes one `<task_id>.json` per episode into `run_dir`.
pub fn persist_episodes(run_dir: &Path, episodes: &[Episode]) -> std::io::Result<()> {
    for ep in episodes {
        write_episode(run_dir, ep)?;
    }
    Ok(())
}

/// Counts for one report row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteStats {
    pub label: String,
    /// `None` for the overall row.
    pub website: Option<Website>,
    pub tasks: usize,
    pub successes: usize,
    pub steps_success: usize,
    pub steps_fail: usize,
}

/// `num / den` rounded half away from zero, for non-negative operands.
fn round_div(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl SiteStats {
    fn add(&mut self, ep: &Episode) {
        self.tasks += 1;
        if ep.outcome == Outcome::Success {
            self.successes += 1;
            self.steps_success += ep.steps();
        } else {
            self.steps_fail += ep.steps();
        }
    }

    pub fn failures(&self) -> usize {
        self.tasks - self.successes
    }

    pub fn steps_all(&self) -> usize {
        self.steps_success + self.steps_fail
    }

    /// Success rate in percent.
    pub fn success_rate(&self) -> Option<f64> {
        ratio(self.successes * 100, self.tasks)
    }

    pub fn avg_steps_all(&self) -> Option<f64> {
        ratio(self.steps_all(), self.tasks)
    }

    pub fn avg_steps_success(&self) -> Option<f64> {
        ratio(self.steps_success, self.successes)
    }

    pub fn avg_steps_fail(&self) -> Option<f64> {
        ratio(self.steps_fail, self.failures())
    }

    fn rate_cell(&self) -> String {
        if self.tasks == 0 {
            return UNDEFINED.into();
        }
        let tenths = round_div(1000 * self.successes as u64, self.tasks as u64);
        format!("{}.{}", tenths / 10, tenths % 10)
    }

    fn steps_cell(steps: usize, count: usize) -> String {
        if count == 0 {
            return UNDEFINED.into();
        }
        let hundredths = round_div(100 * steps as u64, count as u64);
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }

    /// Row cells in column order.
    pub fn cells(&self) -> [String; 6] {
        [
            self.label.clone(),
            self.tasks.to_string(),
            Self::steps_cell(self.steps_all(), self.tasks),
            Self::steps_cell(self.steps_success, self.successes),
            Self::steps_cell(self.steps_fail, self.failures()),
            self.rate_cell(),
        ]
    }
}

/// Overall row first, then one row per website present, in website order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<SiteStats>,
}

impl Report {
    pub fn overall(&self) -> Option<&SiteStats> {
        self.rows.first().filter(|r| r.website.is_none())
    }

    pub fn site(&self, website: Website) -> Option<&SiteStats> {
        self.rows.iter().find(|r| r.website == Some(website))
    }
}

pub fn aggregate(episodes: &[Episode]) -> Report {
    if episodes.is_empty() {
        return Report::default();
    }
    let mut overall = SiteStats {
        label: "Overall".into(),
        ..SiteStats::default()
    };
    let mut sites: BTreeMap<Website, SiteStats> = BTreeMap::new();
    for ep in episodes {
        overall.add(ep);
        let w = ep.task.website;
        sites
            .entry(w)
            .or_insert_with(|| SiteStats {
                label: w.display_name().into(),
                website: Some(w),
                ..SiteStats::default()
            })
            .add(ep);
    }
    let mut rows = vec![overall];
    rows.extend(sites.into_values());
    Report { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}` (markdown|csv)")),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders the table. An empty report renders the header alone.
pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str(&format!("| {} |\n", COLUMNS.join(" | ")));
            out.push_str("|---|---:|---:|---:|---:|---:|\n");
            for r in &report.rows {
                out.push_str(&format!("| {} |\n", r.cells().join(" | ")));
            }
            if !report.rows.is_empty() {
                out.push_str(&format!("\n{STEPS_FOOTNOTE}\n"));
            }
        }
        ReportFormat::Csv => {
            out.push_str(&CSV_COLUMNS.join(","));
            out.push('\n');
            for r in &report.rows {
                let cells: Vec<String> = r.cells().iter().map(|c| csv_field(c)).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
    }
    out
}

/// Writes `report.md` and `report.csv` into `run_dir`.
pub fn write_report(run_dir: &Path, report: &Report) -> std::io::Result<()> {
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("report.md"), emit_report(report, ReportFormat::Markdown))?;
    std::fs::write(run_dir.join("report.csv"), emit_report(report, ReportFormat::Csv))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_div(5, 10), 1);
        assert_eq!(round_div(4, 10), 0);
        assert_eq!(round_div(15, 10), 2);
        assert_eq!(round_div(25, 10), 3);
        assert_eq!(round_div(0, 3), 0);
    }

    #[test]
    fn reference_outcomes_reproduce_site_rates() {
        let report = aggregate(&synthetic_episodes(&reference_suite(REFERENCE_SITES)));
        let rates: Vec<String> = report.rows.iter().map(|r| r.cells()[5].clone()).collect();
        assert_eq!(rates, vec!["53.9", "53.3", "84.2", "48.6", "55.6", "46.2", "30.0"]);
        let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            vec!["Overall", "GitLab", "Reddit", "Shopping Admin", "Shopping", "Map", "Multiple Websites"]
        );
        let overall = report.overall().unwrap();
        assert_eq!((overall.successes, overall.tasks), (89, 165));
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = aggregate(&[]);
        assert!(r.rows.is_empty());
        assert_eq!(emit_report(&r, ReportFormat::Markdown).lines().count(), 2);
        assert_eq!(emit_report(&r, ReportFormat::Csv).lines().count(), 1);
    }

    #[test]
    fn all_success_has_undefined_fail_steps() {
        let site = [SiteOutcome::new(Website::Map, 3, 3, 6, 0)];
        let r = aggregate(&synthetic_episodes(&reference_suite(&site)));
        let cells = r.site(Website::Map).unwrap().cells();
        assert_eq!(cells[5], "100.0");
        assert_eq!(cells[4], UNDEFINED);
        assert_eq!(cells[3], "2.00");
    }

    #[test]
    fn csv_and_markdown_agree_cell_for_cell() {
        let r = aggregate(&synthetic_episodes(&reference_suite(REFERENCE_SITES)));
        let md = emit_report(&r, ReportFormat::Markdown);
        let csv = emit_report(&r, ReportFormat::Csv);
        let md_rows: Vec<Vec<String>> = md
            .lines()
            .skip(2)
            .take_while(|l| l.starts_with('|'))
            .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
            .collect();
        let csv_rows: Vec<Vec<String>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        assert_eq!(md_rows, csv_rows);
        assert!(md.contains(STEPS_FOOTNOTE));
    }
}
