use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest, Completion, Usage};

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "LEAVS_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Raw HTTP POST of a JSON body. `Err` means no HTTP response was received.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpReply, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpReply, String> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

/// Client for OpenAI-style `/chat/completions` endpoints (vLLM, TGI,
/// llama.cpp server, hosted APIs).
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    transport: Box<dyn Transport>,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self::with_transport(endpoint, api_key, Box::new(UreqTransport::new(timeout)))
    }

    pub fn with_transport(endpoint: &str, api_key: Option<String>, transport: Box<dyn Transport>) -> Self {
        HttpBackend {
            url: completions_url(endpoint),
            api_key,
            transport,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Accepts either a full `.../chat/completions` URL or a base such as
/// `http://host:8000/v1`.
pub fn completions_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim().trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

pub fn request_body(request: &ChatRequest<'_>) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
        .collect();
    json!({
        "model": request.model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

fn looks_like_context_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length_exceeded")
        || lower.contains("maximum context length")
        || (lower.contains("context") && (lower.contains("too long") || lower.contains("exceed")))
        || lower.contains("too many tokens")
}

pub fn parse_reply(reply: &HttpReply) -> Result<Completion, BackendError> {
    match reply.status {
        200..=299 => {}
        408 | 429 | 500..=599 => {
            return Err(BackendError::Transient(format!("HTTP {}", reply.status)));
        }
        400 | 413 if looks_like_context_overflow(&reply.body) => {
            return Err(BackendError::ContextOverflow(truncate(&reply.body)));
        }
        status => {
            return Err(BackendError::Rejected { status, body: truncate(&reply.body) });
        }
    }
    let value: Value = serde_json::from_str(&reply.body)
        .map_err(|e| BackendError::Malformed(format!("body is not JSON: {e}")))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let usage = Usage {
        prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: value
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok(Completion { text: text.to_string(), usage })
}

fn truncate(body: &str) -> String {
    body.chars().take(500).collect()
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let body = request_body(request).to_string();
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let reply = self
            .transport
            .post_json(&self.url, &headers, &body)
            .map_err(BackendError::Transient)?;
        parse_reply(&reply)
    }

    fn describe(&self) -> String {
        format!("http({})", self.url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Message};
    use crate::schema::LlmConfig;
    use std::sync::Mutex;

    /// Replays a fixed sequence of replies and records every request.
    struct FaultInjector {
        replies: Mutex<Vec<Result<HttpReply, String>>>,
        seen: std::sync::Arc<Mutex<Vec<(String, String)>>>,
    }

    impl Transport for FaultInjector {
        fn post_json(&self, url: &str, _: &[(String, String)], body: &str) -> Result<HttpReply, String> {
            self.seen.lock().unwrap().push((url.to_string(), body.to_string()));
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices":[{"message":{"role":"assistant","content":text}}],
               "usage":{"prompt_tokens":12,"completion_tokens":3}})
        .to_string()
    }

    #[test]
    fn two_500s_then_success_takes_three_attempts() {
        let seen = std::sync::Arc::new(Mutex::new(Vec::new()));
        let transport = FaultInjector {
            replies: Mutex::new(vec![
                Ok(HttpReply { status: 500, body: "boom".into() }),
                Ok(HttpReply { status: 500, body: "boom".into() }),
                Ok(HttpReply { status: 200, body: ok_body("fine") }),
            ]),
            seen: seen.clone(),
        };
        let gw = Gateway::new(HttpBackend::with_transport("http://x/v1", None, Box::new(transport)));
        let cfg = LlmConfig { backoff_base_ms: 0, model_name: "m".into(), ..LlmConfig::default() };
        let ex = gw.chat(&[Message::user("hello")], &cfg).unwrap();
        assert_eq!(ex.attempt, 3);
        assert_eq!(ex.response, "fine");
        assert_eq!(ex.usage, Usage { prompt_tokens: 12, completion_tokens: 3 });
        assert_eq!(ex.failed_attempts, vec!["HTTP 500", "HTTP 500"]);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[0].0, "http://x/v1/chat/completions");
        let body: Value = serde_json::from_str(&seen[0].1).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 2048);
    }

    #[test]
    fn status_classification() {
        let r = |status, body: &str| parse_reply(&HttpReply { status, body: body.into() });
        assert!(matches!(r(503, ""), Err(BackendError::Transient(_))));
        assert!(matches!(r(429, ""), Err(BackendError::Transient(_))));
        assert!(matches!(
            r(400, "This model's maximum context length is 8192 tokens"),
            Err(BackendError::ContextOverflow(_))
        ));
        assert!(matches!(r(401, "nope"), Err(BackendError::Rejected { status: 401, .. })));
        assert!(matches!(r(200, "not json"), Err(BackendError::Malformed(_))));
        assert!(matches!(r(200, "{\"choices\":[]}"), Err(BackendError::Malformed(_))));
        assert_eq!(r(200, &ok_body("x")).unwrap().text, "x");
    }

    #[test]
    fn url_normalization() {
        assert_eq!(completions_url("http://h:8000/v1/"), "http://h:8000/v1/chat/completions");
        assert_eq!(
            completions_url("http://h/v1/chat/completions"),
            "http://h/v1/chat/completions"
        );
    }
}
