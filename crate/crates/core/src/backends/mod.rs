//! Sample generators: a seeded simulator, an OpenAI-compatible HTTP client,
//! and a record/replay wrapper around either.

mod openai;
mod replay;
mod simulated;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use openai::{HttpResponse, OpenAiBackend, OpenAiSettings, RetryPolicy, Transport, TransportError, UreqTransport};
pub use replay::{FixtureKey, FixtureStore, RecordReplay, ReplayMode};
pub use simulated::{SimulatedModel, SIM_TEMPLATE};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub query_id: String,
    pub prompt: String,
    pub params: SamplingParams,
    pub count: usize,
    /// Index of the first requested sample within this query and model.
    pub first_index: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendErrorKind {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (retry after {retry_after:?}s)")]
    RateLimited { retry_after: Option<f64> },
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no recorded fixture for key {0}")]
    FixtureMiss(String),
    #[error("no distribution for query {0}")]
    UnknownQuery(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("backend {backend}: {kind}")]
pub struct BackendError {
    pub backend: String,
    pub kind: BackendErrorKind,
}

impl BackendError {
    pub fn new(backend: impl Into<String>, kind: BackendErrorKind) -> Self {
        Self {
            backend: backend.into(),
            kind,
        }
    }
}

/// A source of raw completions. Implementations must tolerate concurrent
/// calls.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns exactly `req.count` sample texts.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError>;
}

pub(crate) fn check_request(id: &str, req: &GenerationRequest) -> Result<(), BackendError> {
    if req.count == 0 {
        return Err(BackendError::new(id, BackendErrorKind::InvalidRequest("count must be at least 1".into())));
    }
    if req.prompt.is_empty() {
        return Err(BackendError::new(id, BackendErrorKind::InvalidRequest("prompt is empty".into())));
    }
    Ok(())
}

#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers under the backend's own id, replacing any previous entry.
    pub fn insert(&mut self, backend: Arc<dyn Backend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Backend>> {
        self.backends.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}
