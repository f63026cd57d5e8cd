//! Chat-completions over HTTP with exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendReply, ChatBackend, ChatRequest, GatewayError};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub max_retries: u32,
    pub timeout_ms: u64,
    /// First backoff delay; doubled on every further retry.
    pub retry_base_ms: u64,
    pub retry_max_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            max_retries: 3,
            timeout_ms: 60_000,
            retry_base_ms: 500,
            retry_max_ms: 30_000,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
    endpoint: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

enum Attempt {
    Done(String),
    Retry { detail: String, wait: Option<Duration> },
    Fail(GatewayError),
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let endpoint = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        Self {
            cfg,
            api_key: api_key.into(),
            agent,
            endpoint,
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(cfg: HttpConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(GatewayError::MissingCredential(API_KEY_ENV))?;
        Ok(Self::new(cfg, key))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.cfg.retry_base_ms.saturating_mul(factor).min(self.cfg.retry_max_ms))
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt {
        let result = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut resp = match result {
            Ok(r) => r,
            Err(
                e @ (ureq::Error::Timeout(_)
                | ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::Protocol(_)),
            ) => {
                return Attempt::Retry {
                    detail: e.to_string(),
                    wait: None,
                }
            }
            Err(e) => {
                return Attempt::Fail(GatewayError::Transport {
                    attempts: 0,
                    detail: e.to_string(),
                })
            }
        };

        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(GatewayError::Auth { status }),
            429 | 500..=599 => {
                let wait = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                return Attempt::Retry {
                    detail: format!("HTTP {status}"),
                    wait,
                };
            }
            _ => {
                return Attempt::Fail(GatewayError::Transport {
                    attempts: 0,
                    detail: format!("HTTP {status}"),
                })
            }
        }

        let value: Value = match resp.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => {
                return Attempt::Fail(GatewayError::Transport {
                    attempts: 0,
                    detail: format!("malformed response body: {e}"),
                })
            }
        };
        match value.pointer("/choices/0/message/content").and_then(Value::as_str) {
            Some(text) => Attempt::Done(text.to_string()),
            None => Attempt::Fail(GatewayError::Transport {
                attempts: 0,
                detail: "response has no choices[0].message.content".into(),
            }),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.cfg.model
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let mut messages = Vec::with_capacity(2);
        if !req.system_prompt.is_empty() {
            messages.push(WireMessage {
                role: "system",
                content: &req.system_prompt,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &req.user_prompt,
        });
        let body = WireRequest {
            model: &self.cfg.model,
            messages,
            temperature: req.temperature,
        };

        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    return Ok(BackendReply {
                        text,
                        attempt_count: attempts,
                    })
                }
                Attempt::Fail(GatewayError::Transport { detail, .. }) => {
                    return Err(GatewayError::Transport { attempts, detail })
                }
                Attempt::Fail(other) => return Err(other),
                Attempt::Retry { detail, wait } => {
                    if attempts > self.cfg.max_retries {
                        return Err(GatewayError::Transport { attempts, detail });
                    }
                    let delay = wait
                        .map(|w| w.min(Duration::from_millis(self.cfg.retry_max_ms)))
                        .unwrap_or_else(|| self.backoff(attempts));
                    log::warn!(
                        "{} attempt {}/{} failed ({}), retrying in {:?}",
                        self.endpoint,
                        attempts,
                        self.cfg.max_retries + 1,
                        detail,
                        delay
                    );
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let b = HttpBackend::new(
            HttpConfig {
                retry_base_ms: 100,
                retry_max_ms: 1000,
                ..HttpConfig::default()
            },
            "k",
        );
        let ms: Vec<u128> = (1..=6).map(|r| b.backoff(r).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 800, 1000, 1000]);
        assert_eq!(b.backoff(200).as_millis(), 1000);
    }

    #[test]
    fn endpoint_joins_base_url() {
        let b = HttpBackend::new(
            HttpConfig {
                base_url: "http://localhost:9/v1/".into(),
                ..HttpConfig::default()
            },
            "k",
        );
        assert_eq!(b.endpoint(), "http://localhost:9/v1/chat/completions");
    }
}
