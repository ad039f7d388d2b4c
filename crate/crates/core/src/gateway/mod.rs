//! Uniform access to a chat-completion endpoint.
//!
//! [`Gateway::chat`] wraps a [`Backend`] with retry and exponential backoff.
//! Two backends ship with the crate: [`HttpBackend`] speaks the common
//! `/chat/completions` JSON protocol, and [`ScriptedBackend`] answers from a
//! fixed fingerprint table so whole runs can be replayed offline.

mod http;
mod scripted;
mod transcript;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::LlmConfig;

pub use http::{HttpBackend, HttpReply, Transport, UreqTransport, API_KEY_ENV};
pub use scripted::{Script, ScriptedBackend, DEFAULT_FALLBACK, SCRIPT_FORMAT_VERSION};
pub use transcript::{TranscriptEntry, TranscriptError, TranscriptScope, TranscriptStore};

const MAX_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
}

/// Stable hash of a conversation: roles and texts only, never config.
pub fn fingerprint(messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.as_str().as_bytes());
        hasher.update([0x1f]);
        hasher.update(m.content.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One request/response pair together with its delivery metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    pub response: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// 1-based attempt that succeeded.
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_attempts: Vec<String>,
}

pub struct ChatRequest<'a> {
    pub messages: &'a [Message],
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Network failures, timeouts, 429 and 5xx: worth retrying.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("context overflow: {0}")]
    ContextOverflow(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last_error}")]
    ExhaustedRetries { attempts: u32, last_error: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint reported a context overflow: {0}")]
    ContextOverflow(String),
    #[error("endpoint rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("cannot send an empty conversation")]
    EmptyMessages,
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendError>;

    /// Short human-readable description for manifests.
    fn describe(&self) -> String;
}

pub struct Gateway {
    backend: Box<dyn Backend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.describe())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway { backend: Box::new(backend) }
    }

    pub fn from_box(backend: Box<dyn Backend>) -> Self {
        Gateway { backend }
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }

    /// Sends `messages` and returns the assistant's reply.
    ///
    /// Transient failures are retried up to `config.retry_limit` times with
    /// exponential backoff starting at `config.backoff_base_ms`.
    pub fn chat(&self, messages: &[Message], config: &LlmConfig) -> Result<ChatExchange, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let request = ChatRequest {
            messages,
            model: &config.model_name,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        let max_attempts = config.retry_limit + 1;
        let mut failed = Vec::new();
        for attempt in 1..=max_attempts {
            let started = Instant::now();
            let outcome = self.backend.complete(&request);
            let latency_ms = started.elapsed().as_millis() as u64;
            match outcome {
                Ok(c) if c.text.trim().is_empty() => {
                    return Err(GatewayError::MalformedResponse("empty assistant message".into()));
                }
                Ok(c) => {
                    return Ok(ChatExchange {
                        messages: messages.to_vec(),
                        response: c.text,
                        usage: c.usage,
                        latency_ms,
                        attempt,
                        failed_attempts: failed,
                    });
                }
                Err(BackendError::Transient(reason)) => {
                    log::debug!("attempt {attempt}/{max_attempts} failed: {reason}");
                    failed.push(reason);
                    if attempt < max_attempts {
                        std::thread::sleep(backoff_delay(config.backoff_base_ms, attempt));
                    }
                }
                Err(BackendError::Malformed(m)) => return Err(GatewayError::MalformedResponse(m)),
                Err(BackendError::ContextOverflow(m)) => return Err(GatewayError::ContextOverflow(m)),
                Err(BackendError::Rejected { status, body }) => {
                    return Err(GatewayError::Rejected { status, body })
                }
            }
        }
        Err(GatewayError::ExhaustedRetries {
            attempts: max_attempts,
            last_error: failed.pop().unwrap_or_default(),
        })
    }
}

/// Delay before retrying after failed attempt number `attempt` (1-based).
pub fn backoff_delay(base_ms: u64, attempt: u32) -> Duration {
    let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
    Duration::from_millis(base_ms.saturating_mul(factor)).min(MAX_BACKOFF)
}
