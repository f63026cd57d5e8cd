//! Chat-completion gateway.
//!
//! [`Gateway`] wraps a [`ChatBackend`] with an in-flight limit, refusal
//! detection and output truncation. Two backends ship: [`HttpBackend`] for
//! chat-completions endpoints and [`MockBackend`], a deterministic
//! keyword-lexicon stand-in. The gateway also owns the [`Redactor`] applied
//! to text before it leaves the local environment.

mod http;
mod lexicon;
mod mock;
mod redact;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::char_len;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use lexicon::{LexiconEntry, RiskLexicon};
pub use mock::{mock_complete, MockBackend, PromptShape};
pub use redact::{RedactionReport, Redactor, Replacement, SpanKind};

/// Appended to responses cut at `max_output_chars`.
pub const TRUNCATION_MARKER: &str = "…[truncated]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_output_chars: usize,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>, max_output_chars: usize) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_output_chars,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// What a backend hands back before gateway post-processing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub attempt_count: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("credential rejected by backend (HTTP {status})")]
    Auth { status: u16 },
    #[error("environment variable {0} is not set")]
    MissingCredential(&'static str),
    #[error("backend refused or returned nothing: {detail}")]
    BackendRefusal { detail: String },
    #[error("request carries no recognised task tag")]
    UnknownPromptShape,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Failures of the remote side, as opposed to malformed input.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport { .. }
                | GatewayError::Auth { .. }
                | GatewayError::MissingCredential(_)
                | GatewayError::BackendRefusal { .. }
        )
    }
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn send(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError>;
}

/// Counting semaphore bounding concurrent outbound requests.
#[derive(Debug)]
struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    released: Condvar,
}

impl InFlightLimit {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limit: self }
    }
}

struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.current.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limit.released.notify_one();
    }
}

const REFUSAL_PREFIXES: &[&str] = &[
    "i'm sorry, but i can",
    "i am sorry, but i can",
    "i cannot help with",
    "i can't help with",
    "i can't assist with",
    "i cannot assist with",
    "抱歉，我无法",
    "对不起，我不能",
];

fn is_refusal(text: &str) -> bool {
    let lowered = text.trim_start().to_lowercase();
    REFUSAL_PREFIXES.iter().any(|p| lowered.starts_with(p))
}

/// Cuts `text` so that it holds at most `max_chars` characters, marker
/// included. Returns the input unchanged when it already fits.
pub fn truncate_output(text: &str, max_chars: usize) -> String {
    if char_len(text) <= max_chars {
        return text.to_string();
    }
    let marker_len = char_len(TRUNCATION_MARKER);
    if max_chars > marker_len {
        let mut out: String = text.chars().take(max_chars - marker_len).collect();
        out.push_str(TRUNCATION_MARKER);
        out
    } else {
        text.chars().take(max_chars).collect()
    }
}

/// Shared, cloneable entry point for every model call.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    limit: Arc<InFlightLimit>,
    redactor: Arc<Redactor>,
    temperature: Option<f64>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("max_in_flight", &self.limit.max)
            .finish()
    }
}

impl Gateway {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

    pub fn new(backend: Arc<dyn ChatBackend>, max_in_flight: usize, redactor: Redactor) -> Self {
        Self {
            backend,
            limit: Arc::new(InFlightLimit::new(max_in_flight)),
            redactor: Arc::new(redactor),
            temperature: None,
        }
    }

    /// Sampling temperature applied to every request, replacing the
    /// request's own value.
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = Some(temperature);
        self
    }

    /// Mock backend with the default lexicon and an empty redactor.
    pub fn mock() -> Self {
        Self::new(
            Arc::new(MockBackend::new(RiskLexicon::default())),
            Self::DEFAULT_MAX_IN_FLIGHT,
            Redactor::default(),
        )
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn redactor(&self) -> &Redactor {
        &self.redactor
    }

    pub fn redact(&self, text: &str) -> RedactionReport {
        self.redactor.redact(text)
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let overridden;
        let req = match self.temperature {
            Some(t) if t != req.temperature => {
                overridden = ChatRequest {
                    temperature: t,
                    ..req.clone()
                };
                &overridden
            }
            _ => req,
        };
        if req.user_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user prompt is empty".into()));
        }
        if req.max_output_chars == 0 {
            return Err(GatewayError::InvalidRequest("max_output_chars must be positive".into()));
        }
        if !(0.0..=2.0).contains(&req.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                req.temperature
            )));
        }

        let started = Instant::now();
        let reply = {
            let _permit = self.limit.acquire();
            self.backend.send(req)?
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        if reply.text.trim().is_empty() {
            return Err(GatewayError::BackendRefusal {
                detail: "empty response".into(),
            });
        }
        if is_refusal(&reply.text) {
            return Err(GatewayError::BackendRefusal {
                detail: reply.text.chars().take(80).collect(),
            });
        }
        Ok(ChatResponse {
            text: truncate_output(&reply.text, req.max_output_chars),
            backend_id: self.backend.id().to_string(),
            latency_ms,
            attempt_count: reply.attempt_count,
        })
    }
}
