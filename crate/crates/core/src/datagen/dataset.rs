use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatagenError, DatasetRecord, Flavor, Quarantined};
use crate::dsl::{parse_action_text, split_preamble};
use crate::llm::{Role, TEMPLATE_VERSION};
use crate::plan::{parse_plan, split_plan_preamble, PlanVariant};

/// Summary written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub file: String,
    pub seed: u64,
    pub template_version: String,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    pub provenance: BTreeMap<String, usize>,
    pub sha256: String,
}

impl Manifest {
    /// `data/planner.jsonl` -> `data/planner.manifest.json`.
    pub fn path_for(dataset: &Path) -> PathBuf {
        let stem = dataset
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset");
        dataset.with_file_name(format!("{stem}.manifest.json"))
    }
}

fn check_plan_target(text: &str) -> Result<(), String> {
    let plan = parse_plan(text, PlanVariant::Plain).map_err(|e| e.to_string())?;
    if plan.is_grounded() || plan.steps.iter().any(|s| s.description.is_some()) {
        return Err("plan target carries descriptions or action indices".into());
    }
    Ok(())
}

fn check_original(record: &DatasetRecord, body: &str) -> Result<(), String> {
    match &record.meta.original_target {
        Some(orig) if orig.trim() != body.trim() => {
            Err("target does not end with the original target".into())
        }
        _ => Ok(()),
    }
}

/// Checks that a record's target parses under its flavor's grammar and that
/// its inputs end with a user turn.
pub fn lint_record(record: &DatasetRecord) -> Result<(), String> {
    match record.messages.last() {
        None => return Err("no input messages".into()),
        Some(m) if m.role != Role::User => return Err("last input message is not a user turn".into()),
        _ => {}
    }
    match record.flavor {
        Flavor::PlannerSft | Flavor::ReplannerSft => check_plan_target(&record.target),
        Flavor::ExecutorSft => parse_action_text(&record.target)
            .map(|_| ())
            .map_err(|e| e.to_string()),
        Flavor::PlannerCot => {
            let (pre, body) =
                split_plan_preamble(&record.target).ok_or("no `## Step 1` after the reasoning")?;
            if pre.is_empty() {
                return Err("reasoning trace is empty".into());
            }
            check_plan_target(body)?;
            check_original(record, body)
        }
        Flavor::ExecutorCot => {
            let (pre, block) = split_preamble(&record.target).ok_or("no action after the reasoning")?;
            if pre.is_empty() {
                return Err("reasoning trace is empty".into());
            }
            parse_action_text(&block).map_err(|e| e.to_string())?;
            check_original(record, &block)
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatagenError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| DatagenError::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatagenError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            DatagenError::Io(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatagenError> {
    read_jsonl(path)
}

pub fn write_quarantine(path: &Path, items: &[Quarantined]) -> Result<(), DatagenError> {
    write_jsonl(path, items)
}

/// Writes records as JSONL plus a manifest beside them. Every record must
/// pass [`lint_record`]; nothing is written otherwise.
pub fn write_dataset(
    records: &[DatasetRecord],
    path: &Path,
    seed: u64,
) -> Result<Manifest, DatagenError> {
    for (index, r) in records.iter().enumerate() {
        lint_record(r).map_err(|message| DatagenError::InvalidRecord { index, message })?;
    }
    write_jsonl(path, records)?;
    let mut counts: BTreeMap<String, usize> =
        Flavor::ALL.iter().map(|f| (f.as_str().to_string(), 0)).collect();
    let mut provenance: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.flavor.as_str().to_string()).or_default() += 1;
        *provenance.entry(r.meta.origin.clone()).or_default() += 1;
    }
    let manifest = Manifest {
        file: path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
        seed,
        template_version: TEMPLATE_VERSION.to_string(),
        total: records.len(),
        counts,
        provenance,
        sha256: hex::encode(Sha256::digest(std::fs::read(path)?)),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatagenError::Io(e.to_string()))?;
    std::fs::write(Manifest::path_for(path), json + "\n")?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LintReport {
    pub total: usize,
    /// 1-based line number and problem.
    pub errors: Vec<(usize, String)>,
}

impl LintReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Re-checks every record of a JSONL dataset.
pub fn lint_dataset(path: &Path) -> Result<LintReport, DatagenError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    let mut report = LintReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.total += 1;
        let result = serde_json::from_str::<DatasetRecord>(&line)
            .map_err(|e| format!("not a dataset record: {e}"))
            .and_then(|r| lint_record(&r));
        if let Err(e) = result {
            report.errors.push((i + 1, e));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::RecordMeta;
    use crate::llm::ChatMessage;

    fn record(flavor: Flavor, target: &str) -> DatasetRecord {
        DatasetRecord {
            flavor,
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            target: target.into(),
            meta: RecordMeta {
                source: "t".into(),
                origin: "episode".into(),
                ..RecordMeta::default()
            },
        }
    }

    const PLAN: &str = "## Step 1\nReasoning: r\nStep: s\n";
    const ACTION: &str = "# Element: the Go button\ndo(action=\"Click\", element=\"16\")";

    #[test]
    fn targets_are_checked_per_flavor() {
        assert!(lint_record(&record(Flavor::PlannerSft, PLAN)).is_ok());
        assert!(lint_record(&record(Flavor::PlannerSft, ACTION)).is_err());
        assert!(lint_record(&record(Flavor::ExecutorSft, ACTION)).is_ok());
        assert!(lint_record(&record(Flavor::ExecutorSft, PLAN)).is_err());
        let grounded = "## Step 1\nReasoning: r\nStep: s\nActions: [0]\n";
        assert!(lint_record(&record(Flavor::ReplannerSft, grounded)).is_err());
    }

    #[test]
    fn cot_targets_need_a_trace_and_the_original() {
        let mut r = record(Flavor::ExecutorCot, &format!("I should press Go.\n\n{ACTION}"));
        r.meta.original_target = Some(ACTION.into());
        assert!(lint_record(&r).is_ok());
        r.target = ACTION.into();
        assert!(lint_record(&r).is_err());
        let mut p = record(Flavor::PlannerCot, &format!("Think first.\n\n{PLAN}"));
        p.meta.original_target = Some(PLAN.into());
        assert!(lint_record(&p).is_ok());
        p.meta.original_target = Some("## Step 1\nReasoning: x\nStep: y".into());
        assert!(lint_record(&p).is_err());
    }

    #[test]
    fn inputs_must_end_with_a_user_turn() {
        let mut r = record(Flavor::PlannerSft, PLAN);
        r.messages.push(ChatMessage::assistant("a"));
        assert!(lint_record(&r).is_err());
    }

    #[test]
    fn write_then_lint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![record(Flavor::PlannerSft, PLAN), record(Flavor::ExecutorSft, ACTION)];
        let m = write_dataset(&records, &path, 42).unwrap();
        assert_eq!(m.total, 2);
        assert_eq!(m.counts["PlannerSFT"], 1);
        assert_eq!(m.counts["ReplannerSFT"], 0);
        assert_eq!(m.provenance["episode"], 2);
        assert!(Manifest::path_for(&path).exists());
        assert!(lint_dataset(&path).unwrap().is_ok());
        assert_eq!(read_dataset(&path).unwrap(), records);
        let first = std::fs::read(&path).unwrap();
        write_dataset(&records, &path, 42).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn empty_dataset_has_zero_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let m = write_dataset(&[], &path, 0).unwrap();
        assert_eq!(m.total, 0);
        assert!(m.counts.values().all(|&c| c == 0));
        assert_eq!(std::fs::read(&path).unwrap(), b"");
    }

    #[test]
    fn invalid_records_are_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let err = write_dataset(&[record(Flavor::ExecutorSft, "nope")], &path, 0).unwrap_err();
        assert!(matches!(err, DatagenError::InvalidRecord { index: 0, .. }));
        assert!(!path.exists());
    }

    #[test]
    fn lint_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        let good = serde_json::to_string(&record(Flavor::PlannerSft, PLAN)).unwrap();
        let bad = serde_json::to_string(&record(Flavor::PlannerSft, "no plan")).unwrap();
        std::fs::write(&path, format!("{good}\n{bad}\nnot json\n")).unwrap();
        let r = lint_dataset(&path).unwrap();
        assert_eq!(r.total, 3);
        assert_eq!(r.errors.iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 3]);
    }
}
