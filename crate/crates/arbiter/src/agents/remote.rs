//! Chat-completion HTTP backend and the shared requests-per-minute limiter.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AgentSpec, Message};

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("HTTP {status}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response body: {0}")]
    MalformedBody(String),
}

impl RemoteError {
    pub fn retryable(&self) -> bool {
        match self {
            RemoteError::Status { status, .. } => *status == 429 || *status >= 500,
            RemoteError::Transport(_) => true,
            RemoteError::MalformedBody(_) => false,
        }
    }
}

pub struct HttpClient {
    client: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new() -> HttpClient {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .connect_timeout(Duration::from_secs(10))
            .build()
            .expect("default TLS backend is available");
        HttpClient { client }
    }

    /// POSTs a chat-completion request and returns the first choice's
    /// message content.
    pub fn chat(
        &self,
        endpoint: &str,
        bearer_token: Option<&str>,
        spec: &AgentSpec,
        messages: &[Message],
    ) -> Result<String, RemoteError> {
        let body = ChatRequest {
            model: &spec.model_name,
            messages,
            temperature: spec.temperature,
            max_tokens: spec.max_tokens,
        };
        let mut request = self.client.post(endpoint).json(&body);
        if let Some(token) = bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(RemoteError::Status {
                status,
                body: truncate(&text, 300),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| RemoteError::MalformedBody(format!("{e}: {}", truncate(&text, 200))))?;
        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| RemoteError::MalformedBody("no choices[0].message.content".into()))?;
        Ok(content)
    }
}

impl Default for HttpClient {
    fn default() -> Self {
        HttpClient::new()
    }
}

fn truncate(s: &str, limit: usize) -> String {
    if s.len() <= limit {
        s.to_string()
    } else {
        let mut end = limit;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// Sliding-window limiter: at most `budget` acquisitions per rolling minute.
/// Shared per endpoint across all workers.
pub struct MinuteLimiter {
    budget: u32,
    window: Mutex<VecDeque<Instant>>,
}

impl MinuteLimiter {
    pub fn new(budget: u32) -> MinuteLimiter {
        MinuteLimiter {
            budget: budget.max(1),
            window: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a slot is available, then claims it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut window = self.window.lock().expect("limiter poisoned");
                let now = Instant::now();
                while window
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60))
                {
                    window.pop_front();
                }
                if window.len() < self.budget as usize {
                    window.push_back(now);
                    return;
                }
                let oldest = *window.front().expect("window is at budget");
                Duration::from_secs(60) - now.duration_since(oldest)
            };
            std::thread::sleep(wait.min(Duration::from_millis(250)));
        }
    }
}
