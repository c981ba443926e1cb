use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendErrorKind, GenerationRequest, SamplingParams};
use crate::hashing::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Call the wrapped backend and persist every sample.
    Record,
    /// Serve only from the store; the wrapped backend is never called.
    Replay,
    /// Forward to the wrapped backend without touching the store.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureKey {
    pub backend: String,
    pub prompt_sha256: String,
    pub params_sha256: String,
    pub sample_index: usize,
}

impl FixtureKey {
    pub fn new(backend: &str, prompt: &str, params: &SamplingParams, sample_index: usize) -> Self {
        Self {
            backend: backend.to_string(),
            prompt_sha256: sha256_hex(prompt),
            params_sha256: sha256_hex(serde_json::to_vec(params).expect("params serialize")),
            sample_index,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.json", sha256_hex(serde_json::to_vec(self).expect("key serializes")))
    }
}

impl std::fmt::Display for FixtureKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/prompt:{}/params:{}/#{}",
            self.backend,
            &self.prompt_sha256[..12],
            &self.params_sha256[..12],
            self.sample_index
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    key: FixtureKey,
    text: String,
}

/// Directory of content-addressed sample records.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &FixtureKey) -> Result<Option<String>, String> {
        let path = self.dir.join(key.file_name());
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(format!("{}: {e}", path.display())),
        };
        let rec: Record = serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        if &rec.key != key {
            return Err(format!("{}: stored key does not match", path.display()));
        }
        Ok(Some(rec.text))
    }

    /// Writes through a temporary file so readers never see partial JSON.
    pub fn put(&self, key: &FixtureKey, text: &str) -> Result<(), String> {
        fs::create_dir_all(&self.dir).map_err(|e| format!("{}: {e}", self.dir.display()))?;
        let name = key.file_name();
        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let body = serde_json::to_vec_pretty(&Record {
            key: key.clone(),
            text: text.to_string(),
        })
        .expect("record serializes");
        fs::write(&tmp, body).map_err(|e| format!("{}: {e}", tmp.display()))?;
        fs::rename(&tmp, self.dir.join(name)).map_err(|e| format!("{}: {e}", self.dir.display()))
    }
}

pub struct RecordReplay {
    inner: Arc<dyn Backend>,
    store: FixtureStore,
    mode: ReplayMode,
}

impl RecordReplay {
    pub fn new(inner: Arc<dyn Backend>, store: FixtureStore, mode: ReplayMode) -> Self {
        Self { inner, store, mode }
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    fn keys(&self, req: &GenerationRequest) -> impl Iterator<Item = FixtureKey> + '_ {
        let id = self.inner.id().to_string();
        let prompt = req.prompt.clone();
        let params = req.params.clone();
        (req.first_index..req.first_index + req.count).map(move |i| FixtureKey::new(&id, &prompt, &params, i))
    }

    fn store_err(&self, msg: String) -> BackendError {
        BackendError::new(self.inner.id(), BackendErrorKind::Store(msg))
    }
}

impl Backend for RecordReplay {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        match self.mode {
            ReplayMode::Passthrough => self.inner.generate(req),
            ReplayMode::Replay => self
                .keys(req)
                .map(|key| match self.store.get(&key) {
                    Ok(Some(text)) => Ok(text),
                    Ok(None) => Err(BackendError::new(
                        self.inner.id(),
                        BackendErrorKind::FixtureMiss(key.to_string()),
                    )),
                    Err(msg) => Err(self.store_err(msg)),
                })
                .collect(),
            ReplayMode::Record => {
                let texts = self.inner.generate(req)?;
                for (key, text) in self.keys(req).zip(&texts) {
                    self.store.put(&key, text).map_err(|m| self.store_err(m))?;
                }
                Ok(texts)
            }
        }
    }
}
