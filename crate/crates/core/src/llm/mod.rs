//! Model providers and prompt templates.
//!
//! Every model call in the crate goes through [`complete`], which checks the
//! context budget before handing the request to a [`ChatProvider`].

mod http;
mod scripted;
mod template;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpProvider, HttpProviderConfig};
pub use scripted::{ScriptEntry, ScriptFile, ScriptedProvider};
pub use template::{names, PromptTemplate, Slots, TemplateError, TemplateSet, TEMPLATE_VERSION};

/// Inference defaults: greedy decoding, 4196 generated tokens, 32000-token window.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 4196;
pub const DEFAULT_CONTEXT_BUDGET: usize = 32000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub context_budget: usize,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn with_params(mut self, params: &GenerationParams) -> Self {
        self.temperature = params.temperature;
        self.max_tokens = params.max_tokens;
        self.context_budget = params.context_budget;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("request has no messages".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err("temperature must be non-negative".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(format!("{:?} message has empty content", m.role));
        }
        Ok(())
    }
}

/// Sampling parameters attached to one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub context_budget: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted provider exhausted")]
    Exhausted,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompletionError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("prompt needs ~{prompt_tokens} tokens plus {max_tokens} for the reply, over the {budget}-token budget")]
    BudgetExceeded {
        prompt_tokens: usize,
        max_tokens: u32,
        budget: usize,
    },
}

/// Estimates prompt size in tokens.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, messages: &[ChatMessage]) -> usize;
}

/// Four characters per token, rounded up per message.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerToken;

impl TokenEstimator for CharsPerToken {
    fn estimate(&self, messages: &[ChatMessage]) -> usize {
        messages
            .iter()
            .map(|m| m.content.chars().count().div_ceil(4))
            .sum()
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;

    fn name(&self) -> &str {
        "provider"
    }
}

impl fmt::Debug for dyn ChatProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChatProvider({})", self.name())
    }
}

/// Budget-checks and sends a request with the default estimator.
pub fn complete(
    provider: &dyn ChatProvider,
    request: &CompletionRequest,
) -> Result<String, CompletionError> {
    complete_with(provider, request, &CharsPerToken)
}

pub fn complete_with(
    provider: &dyn ChatProvider,
    request: &CompletionRequest,
    estimator: &dyn TokenEstimator,
) -> Result<String, CompletionError> {
    request
        .validate()
        .map_err(ProviderError::InvalidRequest)?;
    let prompt_tokens = estimator.estimate(&request.messages);
    if prompt_tokens + request.max_tokens as usize > request.context_budget {
        return Err(CompletionError::BudgetExceeded {
            prompt_tokens,
            max_tokens: request.max_tokens,
            budget: request.context_budget,
        });
    }
    Ok(provider.complete(request)?)
}

/// A provider bound to a model name and sampling parameters.
#[derive(Clone)]
pub struct ModelBinding {
    pub provider: Arc<dyn ChatProvider>,
    pub model: String,
    pub params: GenerationParams,
}

impl fmt::Debug for ModelBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelBinding")
            .field("provider", &self.provider.name())
            .field("model", &self.model)
            .field("params", &self.params)
            .finish()
    }
}

impl ModelBinding {
    pub fn new(provider: Arc<dyn ChatProvider>, model: impl Into<String>) -> Self {
        ModelBinding {
            provider,
            model: model.into(),
            params: GenerationParams::default(),
        }
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest::new(self.model.clone(), messages).with_params(&self.params)
    }

    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, CompletionError> {
        complete(self.provider.as_ref(), &self.request(messages))
    }
}
