use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_request, Backend, BackendError, BackendErrorKind, GenerationRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    /// Parsed `Retry-After` header in seconds, when present.
    pub retry_after: Option<f64>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Other(String),
}

/// Minimal JSON-over-HTTP surface so the client can run against fakes.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

/// Blocking transport backed by `ureq`.
#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Other(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok());
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(HttpResponse {
            status,
            retry_after,
            body,
        })
    }
}

/// Bounded exponential backoff for retryable failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before retry number `attempt` (0-based). A server-provided
    /// retry-after wins when longer, but is still capped.
    pub fn delay(&self, attempt: u32, retry_after: Option<f64>) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        let hinted = retry_after
            .filter(|s| s.is_finite() && *s > 0.0)
            .map(|s| ((s * 1000.0) as u64).min(self.max_delay_ms))
            .unwrap_or(0);
        Duration::from_millis(exp.max(hinted))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiSettings {
    /// Gateway root, without the `/v1/chat/completions` suffix.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. `None` sends no
    /// authorization header.
    pub api_key_env: Option<String>,
    /// Whether the gateway honours `n > 1` in one request.
    pub supports_n: bool,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
}

/// Client for OpenAI-compatible chat-completions gateways.
pub struct OpenAiBackend {
    id: String,
    settings: OpenAiSettings,
    transport: Arc<dyn Transport>,
}

impl OpenAiBackend {
    pub fn new(id: impl Into<String>, settings: OpenAiSettings, transport: Arc<dyn Transport>) -> Self {
        Self {
            id: id.into(),
            settings,
            transport,
        }
    }

    fn err(&self, kind: BackendErrorKind) -> BackendError {
        BackendError::new(&self.id, kind)
    }

    fn headers(&self) -> Result<Vec<(String, String)>, BackendError> {
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(var) = &self.settings.api_key_env {
            let key = std::env::var(var).map_err(|_| {
                self.err(BackendErrorKind::Unauthorized(format!("environment variable {var} is not set")))
            })?;
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        Ok(headers)
    }

    fn body(&self, req: &GenerationRequest, n: usize) -> Value {
        let mut body = json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": n,
        });
        let obj = body.as_object_mut().expect("object literal");
        if let Some(t) = req.params.temperature {
            obj.insert("temperature".into(), json!(t));
        }
        if let Some(p) = req.params.top_p {
            obj.insert("top_p".into(), json!(p));
        }
        if let Some(m) = req.params.max_tokens {
            obj.insert("max_tokens".into(), json!(m));
        }
        body
    }

    /// One request with retries. Returns the choice texts.
    fn call(&self, body: &Value, headers: &[(String, String)]) -> Result<Vec<String>, BackendError> {
        let url = format!("{}/v1/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let timeout = Duration::from_secs_f64(self.settings.timeout_secs.max(0.001));
        let policy = self.settings.retry;
        let mut attempt = 0;
        loop {
            let (kind, retry_after) = match self.transport.post_json(&url, headers, body, timeout) {
                Err(TransportError::Timeout) => (BackendErrorKind::Timeout, None),
                Err(TransportError::Other(msg)) => (BackendErrorKind::Transport(msg), None),
                Ok(resp) => match resp.status {
                    200..=299 => return self.parse(&resp.body),
                    401 | 403 => return Err(self.err(BackendErrorKind::Unauthorized(format!("status {}", resp.status)))),
                    429 => (
                        BackendErrorKind::RateLimited {
                            retry_after: resp.retry_after,
                        },
                        resp.retry_after,
                    ),
                    408 => (BackendErrorKind::Timeout, None),
                    s if s >= 500 => (BackendErrorKind::Status(s), None),
                    s => return Err(self.err(BackendErrorKind::Status(s))),
                },
            };
            if attempt >= policy.max_retries {
                return Err(self.err(kind));
            }
            std::thread::sleep(policy.delay(attempt, retry_after));
            attempt += 1;
        }
    }

    fn parse(&self, body: &str) -> Result<Vec<String>, BackendError> {
        #[derive(Deserialize)]
        struct Message {
            content: Option<String>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: Message,
        }
        #[derive(Deserialize)]
        struct Completion {
            choices: Vec<Choice>,
        }
        let parsed: Completion =
            serde_json::from_str(body).map_err(|e| self.err(BackendErrorKind::MalformedResponse(e.to_string())))?;
        if parsed.choices.is_empty() {
            return Err(self.err(BackendErrorKind::MalformedResponse("no choices".into())));
        }
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        check_request(&self.id, req)?;
        let headers = self.headers()?;
        let mut out = Vec::with_capacity(req.count);
        while out.len() < req.count {
            let n = if self.settings.supports_n { req.count - out.len() } else { 1 };
            let texts = self.call(&self.body(req, n), &headers)?;
            let take = texts.len().min(req.count - out.len());
            out.extend(texts.into_iter().take(take));
        }
        Ok(out)
    }
}
