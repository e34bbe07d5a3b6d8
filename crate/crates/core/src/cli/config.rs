use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;

use crate::datagen::RubricSet;
use crate::env::MatchMode;
use crate::llm::{
    ChatProvider, GenerationParams, HttpProvider, HttpProviderConfig, ModelBinding,
    ScriptedProvider, TemplateSet, DEFAULT_CONTEXT_BUDGET, DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
};
use crate::runtime::{
    AgentConfig, PlanningMode, DEFAULT_HTML_BUDGET, DEFAULT_PARSE_RETRIES, DEFAULT_STEP_BUDGET,
};

/// Run configuration. Relative paths resolve against the config file's
/// directory. Secrets never live here: HTTP providers name an environment
/// variable holding the key.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Directory of prompt overrides (`<name>.txt`).
    pub templates: Option<PathBuf>,
    /// Directory of rubric overrides (`<website>.md`).
    pub rubrics: Option<PathBuf>,
    pub agent: AgentSection,
    pub datagen: DatagenSection,
    /// Keyed by role: planner, executor, replanner, teacher, judge, orm.
    pub providers: BTreeMap<String, ProviderSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub mode: String,
    pub cot: bool,
    pub step_budget: usize,
    pub parse_retries: usize,
    pub html_budget: usize,
    pub strip_reasoning: bool,
    /// `strict` or `lenient` fixture matching.
    pub match_mode: String,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            mode: "dynamic".into(),
            cot: false,
            step_budget: DEFAULT_STEP_BUDGET,
            parse_retries: DEFAULT_PARSE_RETRIES,
            html_budget: DEFAULT_HTML_BUDGET,
            strip_reasoning: false,
            match_mode: "strict".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSection {
    pub seeds_per_call: usize,
    pub per_call: usize,
    pub orm_threshold: u8,
    pub example_html_budget: usize,
    pub max_calls: Option<usize>,
    /// UI labels targeted augmentation must preserve; defaults to a builtin list.
    pub lexicon: Option<Vec<String>>,
}

impl Default for DatagenSection {
    fn default() -> Self {
        DatagenSection {
            seeds_per_call: 5,
            per_call: 10,
            orm_threshold: 1,
            example_html_budget: 4_000,
            max_calls: None,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Canned responses from a script file.
    Scripted {
        script: PathBuf,
        #[serde(default = "scripted_model")]
        model: String,
    },
    /// A chat-completions compatible endpoint.
    Http {
        base_url: String,
        model: String,
        api_key_env: Option<String>,
        timeout_secs: Option<u64>,
        max_retries: Option<u32>,
        temperature: Option<f64>,
        max_tokens: Option<u32>,
        context_budget: Option<usize>,
    },
}

fn scripted_model() -> String {
    "scripted".into()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates {
            None => Ok(TemplateSet::builtin()),
            Some(dir) => Ok(TemplateSet::with_overrides(&self.resolve(dir))?),
        }
    }

    pub fn rubrics(&self) -> Result<RubricSet> {
        match &self.rubrics {
            None => Ok(RubricSet::builtin()),
            Some(dir) => Ok(RubricSet::with_overrides(&self.resolve(dir))?),
        }
    }

    pub fn match_mode(&self) -> Result<MatchMode> {
        match self.agent.match_mode.as_str() {
            "strict" => Ok(MatchMode::Strict),
            "lenient" => Ok(MatchMode::Lenient),
            other => Err(anyhow!("unknown match_mode `{other}` (strict|lenient)")),
        }
    }

    fn spec(&self, role: &str) -> Option<&ProviderSpec> {
        self.providers.get(role)
    }

    /// The binding for `role`, falling back through `fallbacks` in order.
    pub fn binding(&self, role: &str, fallbacks: &[&str]) -> Result<ModelBinding> {
        let (name, spec) = std::iter::once(role)
            .chain(fallbacks.iter().copied())
            .find_map(|r| self.spec(r).map(|s| (r, s)))
            .ok_or_else(|| anyhow!("config has no provider for role `{role}`"))?;
        match spec {
            ProviderSpec::Scripted { script, model } => {
                let path = self.resolve(script);
                let provider = ScriptedProvider::load(&path)
                    .with_context(|| format!("loading script {}", path.display()))?
                    .named(name);
                Ok(ModelBinding::new(Arc::new(provider), model.clone()))
            }
            ProviderSpec::Http {
                base_url,
                model,
                api_key_env,
                timeout_secs,
                max_retries,
                temperature,
                max_tokens,
                context_budget,
            } => {
                let defaults = HttpProviderConfig::default();
                let provider: Arc<dyn ChatProvider> = Arc::new(HttpProvider::new(HttpProviderConfig {
                    base_url: base_url.clone(),
                    api_key_env: api_key_env.clone(),
                    timeout_secs: timeout_secs.unwrap_or(defaults.timeout_secs),
                    max_retries: max_retries.unwrap_or(defaults.max_retries),
                    ..defaults
                })?);
                let mut binding = ModelBinding::new(provider, model.clone());
                binding.params = GenerationParams {
                    temperature: temperature.unwrap_or(DEFAULT_TEMPERATURE),
                    max_tokens: max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
                    context_budget: context_budget.unwrap_or(DEFAULT_CONTEXT_BUDGET),
                };
                Ok(binding)
            }
        }
    }

    /// Agent configuration; `mode` overrides the config file when given.
    pub fn agent(&self, mode: Option<PlanningMode>) -> Result<AgentConfig> {
        let planner = self.binding("planner", &[])?;
        let executor = self.binding("executor", &[])?;
        let mut cfg = AgentConfig::new(planner, executor);
        if self.providers.contains_key("replanner") {
            cfg = cfg.with_replanner(self.binding("replanner", &[])?);
        }
        let a = &self.agent;
        cfg.planning_mode = match mode {
            Some(m) => m,
            None => a.mode.parse().map_err(|e: String| anyhow!(e))?,
        };
        cfg.cot = a.cot;
        cfg.step_budget = a.step_budget;
        cfg.parse_retries = a.parse_retries;
        cfg.html_budget = a.html_budget;
        cfg.strip_reasoning = a.strip_reasoning;
        cfg.templates = Arc::new(self.templates()?);
        cfg.validate().map_err(|e| anyhow!(e))?;
        Ok(cfg)
    }
}
