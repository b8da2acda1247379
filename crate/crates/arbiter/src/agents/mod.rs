//! Agent abstraction: one `complete` call path over remote chat backends and
//! deterministic scripted backends, with retry, rate limiting, and per-call
//! logging.

pub mod prompts;
pub mod remote;
pub mod scripted;

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::BiasKind;
use crate::parse::{ParseRules, TemplateError};

pub use prompts::PromptTemplates;
pub use scripted::{Reply, ScriptRule};

pub type AgentId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Judge,
    Critic,
    Meta,
    Rewriter,
}

impl AgentRole {
    pub fn label(self) -> &'static str {
        match self {
            AgentRole::Judge => "judge",
            AgentRole::Critic => "critic",
            AgentRole::Meta => "meta",
            AgentRole::Rewriter => "rewriter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Message {
        Message { role: MessageRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Message {
        Message { role: MessageRole::Assistant, content: content.into() }
    }
}

/// Backend selection plus the parameters only that backend needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Backend {
    RemoteChat {
        endpoint: String,
        /// Env var holding the bearer token. Defaults to
        /// `ARBITER_KEY_<AGENT_ID>`; when that default is unset the request
        /// goes out unauthenticated (local endpoints).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
    Scripted {
        #[serde(default)]
        script: Vec<ScriptRule>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    #[serde(flatten)]
    pub backend: Backend,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    0.01
}

fn default_max_tokens() -> u32 {
    1024
}

impl AgentSpec {
    pub fn scripted(id: &str, script: Vec<ScriptRule>) -> AgentSpec {
        AgentSpec {
            id: id.to_string(),
            backend: Backend::Scripted { script },
            model_name: format!("scripted-{id}"),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.id.is_empty() {
            return Err(AgentError::InvalidSpec("agent id must be non-empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(AgentError::InvalidSpec(format!(
                "agent {}: temperature must be >= 0",
                self.id
            )));
        }
        Ok(())
    }

    /// Env var consulted for the bearer token.
    pub fn api_key_env(&self) -> Option<String> {
        match &self.backend {
            Backend::RemoteChat { api_key_env, .. } => Some(
                api_key_env
                    .clone()
                    .unwrap_or_else(|| default_key_env(&self.id)),
            ),
            Backend::Scripted { .. } => None,
        }
    }
}

pub fn default_key_env(agent_id: &str) -> String {
    let sanitized: String = agent_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("ARBITER_KEY_{sanitized}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_backoff_multiplier")]
    pub backoff_multiplier: f64,
    #[serde(default = "default_reformat_reminder")]
    pub reformat_reminder: String,
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_backoff_multiplier() -> f64 {
    2.0
}

fn default_reformat_reminder() -> String {
    "Your previous reply could not be parsed. Repeat your judgment and end \
     with the two score lines in exactly the requested format."
        .into()
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: default_max_attempts(),
            initial_backoff_ms: default_backoff_ms(),
            backoff_multiplier: default_backoff_multiplier(),
            reformat_reminder: default_reformat_reminder(),
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_attempts < 1 {
            return Err(AgentError::InvalidSpec("max_attempts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn backoff_for(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis((self.initial_backoff_ms as f64 * factor) as u64)
    }
}

/// Context a call runs under; scripted rule matching keys off it and every
/// per-attempt log record carries it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallCtx {
    pub task_id: String,
    pub agent: AgentId,
    pub role: AgentRole,
    pub round: u32,
    pub bias: BiasKind,
}

/// One completion attempt, exactly as issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    #[serde(flatten)]
    pub ctx: CallCtx,
    pub attempt: u32,
    pub request: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub ts_ms: u64,
}

/// Per-episode accumulator for call records; the runner moves these into the
/// manifest in episode order.
#[derive(Debug, Default)]
pub struct CallLog {
    pub calls: Vec<CallRecord>,
}

impl CallLog {
    pub fn new() -> CallLog {
        CallLog::default()
    }

    fn push(&mut self, ctx: &CallCtx, attempt: u32, request: &[Message], outcome: Result<&str, &str>) {
        let (response, error) = match outcome {
            Ok(text) => (Some(text.to_string()), None),
            Err(msg) => (None, Some(msg.to_string())),
        };
        self.calls.push(CallRecord {
            ctx: ctx.clone(),
            attempt,
            request: request.to_vec(),
            response,
            error,
            ts_ms: now_ms(),
        });
    }
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent {agent}: backend failed after {attempts} attempt(s): {message}")]
    Backend {
        agent: AgentId,
        attempts: u32,
        message: String,
    },
    #[error("agent {agent}: API key env var {env} is not set")]
    MissingApiKey { agent: AgentId, env: String },
    #[error("unknown agent id: {0}")]
    UnknownAgent(AgentId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid agent spec: {0}")]
    InvalidSpec(String),
    #[error("critic prompt requires at least one prior judge judgment")]
    EmptyHistory,
    #[error("meta prompt requires a pool of at least two judgments, got {0}")]
    PoolTooSmall(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Resolved set of agents for one run, sharing an HTTP client, retry policy,
/// and per-endpoint rate limiters. Safe to call from many workers.
pub struct AgentRuntime {
    specs: HashMap<AgentId, AgentSpec>,
    retry: RetryPolicy,
    rules: ParseRules,
    requests_per_minute: Option<u32>,
    http: remote::HttpClient,
    limiters: Mutex<HashMap<String, std::sync::Arc<remote::MinuteLimiter>>>,
}

impl AgentRuntime {
    pub fn new(
        agents: &[AgentSpec],
        retry: RetryPolicy,
        rules: ParseRules,
        requests_per_minute: Option<u32>,
    ) -> Result<AgentRuntime, AgentError> {
        retry.validate()?;
        let mut specs = HashMap::new();
        for spec in agents {
            spec.validate()?;
            if specs.insert(spec.id.clone(), spec.clone()).is_some() {
                return Err(AgentError::InvalidSpec(format!(
                    "duplicate agent id `{}`",
                    spec.id
                )));
            }
        }
        Ok(AgentRuntime {
            specs,
            retry,
            rules,
            requests_per_minute,
            http: remote::HttpClient::new(),
            limiters: Mutex::new(HashMap::new()),
        })
    }

    pub fn retry(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn spec(&self, id: &str) -> Result<&AgentSpec, AgentError> {
        self.specs
            .get(id)
            .ok_or_else(|| AgentError::UnknownAgent(id.to_string()))
    }

    pub fn has_agent(&self, id: &str) -> bool {
        self.specs.contains_key(id)
    }

    fn limiter_for(&self, endpoint: &str) -> Option<std::sync::Arc<remote::MinuteLimiter>> {
        let budget = self.requests_per_minute?;
        let mut limiters = self.limiters.lock().expect("limiter map poisoned");
        Some(
            limiters
                .entry(endpoint.to_string())
                .or_insert_with(|| std::sync::Arc::new(remote::MinuteLimiter::new(budget)))
                .clone(),
        )
    }

    /// Sends `messages` to the agent named in `ctx` and returns its text.
    /// Every attempt is appended to `log`. Transport failures are retried
    /// per the retry policy; an empty response is returned as-is and left to
    /// the parse layer, which treats it as retryable.
    pub fn complete(
        &self,
        ctx: &CallCtx,
        messages: &[Message],
        log: &mut CallLog,
    ) -> Result<String, AgentError> {
        validate_messages(messages)?;
        let spec = self.spec(&ctx.agent)?;

        match &spec.backend {
            Backend::Scripted { script } => {
                let text = scripted::respond(script, ctx, messages, &self.rules);
                log.push(ctx, 1, messages, Ok(&text));
                Ok(text)
            }
            Backend::RemoteChat { endpoint, .. } => {
                let env = spec.api_key_env().expect("remote agent has a key env");
                let explicit = matches!(
                    &spec.backend,
                    Backend::RemoteChat { api_key_env: Some(_), .. }
                );
                let token = match std::env::var(&env) {
                    Ok(token) => Some(token),
                    Err(_) if explicit => {
                        return Err(AgentError::MissingApiKey {
                            agent: spec.id.clone(),
                            env,
                        })
                    }
                    Err(_) => None,
                };
                let limiter = self.limiter_for(endpoint);

                let mut last_error = String::new();
                let mut attempts_used = 0;
                for attempt in 1..=self.retry.max_attempts {
                    attempts_used = attempt;
                    if let Some(limiter) = &limiter {
                        limiter.acquire();
                    }
                    match self.http.chat(endpoint, token.as_deref(), spec, messages) {
                        Ok(text) => {
                            log.push(ctx, attempt, messages, Ok(&text));
                            return Ok(text);
                        }
                        Err(err) => {
                            last_error = err.to_string();
                            log.push(ctx, attempt, messages, Err(&last_error));
                            if !err.retryable() || attempt == self.retry.max_attempts {
                                break;
                            }
                            std::thread::sleep(self.retry.backoff_for(attempt));
                        }
                    }
                }
                Err(AgentError::Backend {
                    agent: spec.id.clone(),
                    attempts: attempts_used,
                    message: last_error,
                })
            }
        }
    }
}

fn validate_messages(messages: &[Message]) -> Result<(), AgentError> {
    let first = messages
        .first()
        .ok_or_else(|| AgentError::InvalidRequest("messages must be non-empty".into()))?;
    if first.role == MessageRole::Assistant {
        return Err(AgentError::InvalidRequest(
            "first message must be System or User".into(),
        ));
    }
    if messages.iter().any(|m| m.content.is_empty()) {
        return Err(AgentError::InvalidRequest(
            "message content must be non-empty".into(),
        ));
    }
    Ok(())
}
