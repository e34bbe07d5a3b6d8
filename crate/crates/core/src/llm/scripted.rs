use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, CompletionRequest, ProviderError};

/// Replays canned responses.
///
/// Responses are taken from the first matching source:
/// 1. an exact prompt digest (see [`ScriptedProvider::digest`]),
/// 2. the longest route key contained in the latest message that contains
///    any key, so in-context examples in earlier messages do not win,
/// 3. the default queue.
///
/// Routes let concurrent episodes share one provider deterministically: each
/// task's responses are keyed by something unique to its prompts (its intent).
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    name: String,
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    default: VecDeque<String>,
    routes: BTreeMap<String, VecDeque<String>>,
    digests: BTreeMap<String, String>,
    log: Vec<CompletionRequest>,
}

/// On-disk form of a script. Entries are inline text or `{"file": "..."}`
/// paths resolved against the script's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptFile {
    pub default: Vec<ScriptEntry>,
    pub routes: BTreeMap<String, Vec<ScriptEntry>>,
    pub digests: BTreeMap<String, ScriptEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text(String),
    File { file: String },
}

impl ScriptEntry {
    fn resolve(&self, base: &Path) -> std::io::Result<String> {
        match self {
            ScriptEntry::Text(t) => Ok(t.clone()),
            ScriptEntry::File { file } => std::fs::read_to_string(base.join(file)),
        }
    }
}

impl ScriptedProvider {
    pub fn new() -> Self {
        ScriptedProvider {
            name: "scripted".into(),
            state: Mutex::default(),
        }
    }

    pub fn from_queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let p = ScriptedProvider::new();
        for r in responses {
            p.push(r);
        }
        p
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn push(&self, response: impl Into<String>) {
        self.lock().default.push_back(response.into());
    }

    pub fn push_route(&self, key: impl Into<String>, response: impl Into<String>) {
        self.lock()
            .routes
            .entry(key.into())
            .or_default()
            .push_back(response.into());
    }

    pub fn insert_digest(&self, digest: impl Into<String>, response: impl Into<String>) {
        self.lock().digests.insert(digest.into(), response.into());
    }

    pub fn from_script(script: &ScriptFile, base: &Path) -> std::io::Result<Self> {
        let p = ScriptedProvider::new();
        for e in &script.default {
            p.push(e.resolve(base)?);
        }
        for (key, entries) in &script.routes {
            for e in entries {
                p.push_route(key.clone(), e.resolve(base)?);
            }
        }
        for (d, e) in &script.digests {
            p.insert_digest(d.clone(), e.resolve(base)?);
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Ok(ScriptedProvider::from_script(&script, base)?.named(path.display().to_string()))
    }

    /// Hex SHA-256 over the request's roles and contents.
    pub fn digest(request: &CompletionRequest) -> String {
        let mut h = Sha256::new();
        for m in &request.messages {
            h.update(format!("{:?}", m.role).as_bytes());
            h.update([0u8]);
            h.update(m.content.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// Every request received so far, in arrival order.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.lock().log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.lock().log.len()
    }

    pub fn remaining(&self) -> usize {
        let s = self.lock();
        s.default.len() + s.routes.values().map(VecDeque::len).sum::<usize>()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let keys: Vec<String> = {
            let mut s = self.lock();
            s.log.push(request.clone());
            if !s.digests.is_empty() {
                if let Some(r) = s.digests.get(&ScriptedProvider::digest(request)) {
                    return Ok(r.clone());
                }
            }
            s.routes.keys().cloned().collect()
        };
        // Matching runs unlocked so concurrent callers do not serialize on it.
        let route = request.messages.iter().rev().find_map(|m| {
            keys.iter()
                .filter(|k| m.content.contains(k.as_str()))
                .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
                .cloned()
        });
        let mut s = self.lock();
        let queue = match route {
            Some(k) => s.routes.get_mut(&k).expect("route exists"),
            None => &mut s.default,
        };
        queue.pop_front().ok_or(ProviderError::Exhausted)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new("m", vec![ChatMessage::user(text)])
    }

    #[test]
    fn routes_by_longest_contained_key() {
        let p = ScriptedProvider::new();
        p.push_route("walk", "short");
        p.push_route("walk to CMU", "long");
        p.push("fallback");
        assert_eq!(p.complete(&req("please walk to CMU")).unwrap(), "long");
        assert_eq!(p.complete(&req("walk somewhere")).unwrap(), "short");
        assert_eq!(p.complete(&req("drive")).unwrap(), "fallback");
        assert_eq!(p.complete(&req("walk")), Err(ProviderError::Exhausted));
        assert_eq!(p.call_count(), 4);
    }

    #[test]
    fn later_messages_win_routing() {
        let p = ScriptedProvider::new();
        p.push_route("example task", "wrong");
        p.push_route("real task", "right");
        let r = CompletionRequest::new(
            "m",
            vec![ChatMessage::system("e.g. example task"), ChatMessage::user("do the real task")],
        );
        assert_eq!(p.complete(&r).unwrap(), "right");
    }

    #[test]
    fn digest_takes_priority() {
        let p = ScriptedProvider::from_queue(["queued"]);
        let r = req("x");
        p.insert_digest(ScriptedProvider::digest(&r), "by digest");
        assert_eq!(p.complete(&r).unwrap(), "by digest");
        assert_eq!(p.complete(&r).unwrap(), "by digest");
        assert_eq!(p.complete(&req("y")).unwrap(), "queued");
    }

    #[test]
    fn identical_sequences_give_identical_responses() {
        let make = || ScriptedProvider::from_queue(["a", "b", "c"]);
        let (p1, p2) = (make(), make());
        let out1: Vec<_> = (0..3).map(|i| p1.complete(&req(&i.to_string()))).collect();
        let out2: Vec<_> = (0..3).map(|i| p2.complete(&req(&i.to_string()))).collect();
        assert_eq!(out1, out2);
    }

    #[test]
    fn script_file_entries_resolve_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("plan.md"), "## Step 1\n").unwrap();
        let script: ScriptFile = serde_json::from_str(
            r#"{"default": ["inline", {"file": "plan.md"}], "routes": {"k": ["r"]}}"#,
        )
        .unwrap();
        let p = ScriptedProvider::from_script(&script, dir.path()).unwrap();
        assert_eq!(p.complete(&req("a")).unwrap(), "inline");
        assert_eq!(p.complete(&req("a")).unwrap(), "## Step 1\n");
        assert_eq!(p.complete(&req("k")).unwrap(), "r");
    }
}
