use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{AdapterClient, EnvError, EnvFactory, Environment, MatchMode, ReplayEnv, ReplayFixture};
use crate::domain::{TaskEntry, TaskSpec, Website};

/// Replay fixtures indexed by task id, loaded from
/// `<root>/<website>/<task_id>.json`.
#[derive(Debug, Clone, Default)]
pub struct FixtureLibrary {
    fixtures: BTreeMap<String, ReplayFixture>,
    mode: MatchMode,
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), EnvError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| EnvError::Io(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| EnvError::Io(e.to_string()))?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().and_then(|e| e.to_str()) == Some("json") {
            out.push(path);
        }
    }
    Ok(())
}

impl FixtureLibrary {
    pub fn new() -> Self {
        FixtureLibrary::default()
    }

    /// Loads every `*.json` under `root`, recursively. A fixture sitting in a
    /// directory named after a website must belong to that website, and its
    /// file stem must equal its task id.
    pub fn load_dir(root: &Path) -> Result<Self, EnvError> {
        let mut paths = Vec::new();
        collect_json(root, &mut paths)?;
        paths.sort();
        let mut lib = FixtureLibrary::new();
        for path in paths {
            let fixture = ReplayFixture::load(&path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            if stem != fixture.task.id {
                return Err(EnvError::InvalidFixture(format!(
                    "{}: file name does not match task id `{}`",
                    path.display(),
                    fixture.task.id
                )));
            }
            let dir_site = path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|n| n.to_str())
                .and_then(|n| n.parse::<Website>().ok());
            if let Some(site) = dir_site {
                if site != fixture.task.website {
                    return Err(EnvError::InvalidFixture(format!(
                        "{}: task website `{}` does not match directory `{}`",
                        path.display(),
                        fixture.task.website,
                        site
                    )));
                }
            }
            lib.insert(fixture)?;
        }
        Ok(lib)
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn insert(&mut self, fixture: ReplayFixture) -> Result<(), EnvError> {
        fixture.validate()?;
        if self.fixtures.contains_key(&fixture.task.id) {
            return Err(EnvError::InvalidFixture(format!(
                "duplicate task id `{}`",
                fixture.task.id
            )));
        }
        self.fixtures.insert(fixture.task.id.clone(), fixture);
        Ok(())
    }

    pub fn get(&self, task_id: &str) -> Option<&ReplayFixture> {
        self.fixtures.get(task_id)
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Tasks ordered by id.
    pub fn tasks(&self) -> Vec<TaskSpec> {
        self.fixtures.values().map(|f| f.task.clone()).collect()
    }

    /// Writes every fixture to `<root>/<website>/<task_id>.json`.
    pub fn save_dir(&self, root: &Path) -> Result<(), EnvError> {
        for f in self.fixtures.values() {
            let dir = root.join(f.task.website.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| EnvError::Io(e.to_string()))?;
            std::fs::write(dir.join(format!("{}.json", f.task.id)), f.to_json() + "\n")
                .map_err(|e| EnvError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

impl EnvFactory for FixtureLibrary {
    /// Explicit task entries win; otherwise the task id is looked up.
    fn create(&self, task: &TaskSpec) -> Result<Box<dyn Environment>, EnvError> {
        match &task.entry {
            TaskEntry::Fixture { path } => {
                let fixture = ReplayFixture::load(Path::new(path))?;
                Ok(Box::new(ReplayEnv::new(fixture)?.with_mode(self.mode)))
            }
            TaskEntry::Adapter { endpoint } => Ok(Box::new(AdapterClient::connect(endpoint)?)),
            TaskEntry::None => {
                let fixture = self
                    .fixtures
                    .get(&task.id)
                    .ok_or_else(|| EnvError::UnknownTask(task.id.clone()))?;
                Ok(Box::new(ReplayEnv::new(fixture.clone())?.with_mode(self.mode)))
            }
        }
    }
}
