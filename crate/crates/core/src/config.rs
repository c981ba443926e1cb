//! TOML run configuration.
//!
//! ```toml
//! budget = 16
//! seed = 7
//! selection = "weighted-vote"
//! tie_policy = { policy = "earlier-model" }
//!
//! [extraction]
//! builtin = "numeric"
//!
//! [[models]]
//! id = "m1"
//! external_weight = 1.0
//! backend = { kind = "simulated", fixture = "dist.json", model = "m1" }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{Ruleset, RulesetError};
use crate::backends::{
    Backend, BackendRegistry, FixtureStore, OpenAiBackend, OpenAiSettings, RecordReplay, ReplayMode, RetryPolicy,
    SamplingParams, SimulatedModel, Transport,
};
use crate::engine::{allocate_budget, InternalWeights, ModelSpec, OracleScorer, RemoteScorer, Scorer, Selection, SwitchConfig};
use crate::fixture::{DistributionFixture, FixtureError};
use crate::hashing::sha256_hex;
use crate::voting::{NormDefinition, TiePolicy};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "{query}\nLet's think step by step. End with \"The answer is X.\"";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ruleset(#[from] RulesetError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    #[default]
    WeightedVote,
    BestOfN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Built-in ruleset name: numeric, choice or freeform.
    pub builtin: Option<String>,
    /// Ruleset TOML file, relative to the config file.
    pub path: Option<PathBuf>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            builtin: Some("numeric".into()),
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerConfig {
    Oracle,
    Remote {
        base_url: String,
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    RetryPolicy::default().max_retries
}

fn default_true() -> bool {
    true
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Draws from a distribution fixture column.
    Simulated {
        fixture: PathBuf,
        /// Fixture model name; defaults to the model id.
        model: Option<String>,
        /// Overrides the run seed for this model.
        seed: Option<u64>,
    },
    /// OpenAI-compatible chat-completions endpoint.
    Openai {
        base_url: String,
        model: String,
        api_key_env: Option<String>,
        #[serde(default = "default_true")]
        supports_n: bool,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default = "default_weight")]
    pub external_weight: f64,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
    pub backend: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    #[serde(default)]
    pub norm: NormDefinition,
    #[serde(default)]
    pub internal_weights: InternalWeights,
    #[serde(default = "default_true")]
    pub early_exit: bool,
    #[serde(default)]
    pub selection: SelectionKind,
    /// Concurrent queries; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub fail_fast: bool,
    /// `{query}` is replaced with the dataset query text.
    #[serde(default = "default_template")]
    pub prompt_template: String,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    pub scorer: Option<ScorerConfig>,
    pub models: Vec<ModelConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

/// Which strategy `run` executes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunMode {
    Switch,
    /// One model with the whole budget and a plain majority vote.
    SelfConsistency(String),
    /// Switch sampling with best-of-n selection.
    BestOfN,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "switch" => Ok(RunMode::Switch),
            "bon" => Ok(RunMode::BestOfN),
            _ => match s.strip_prefix("self-consistency:") {
                Some(m) if !m.is_empty() => Ok(RunMode::SelfConsistency(m.to_string())),
                _ => Err(format!("unknown mode {s:?}; expected switch, bon or self-consistency:<model>")),
            },
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Switch => f.write_str("switch"),
            RunMode::BestOfN => f.write_str("bon"),
            RunMode::SelfConsistency(m) => write!(f, "self-consistency:{m}"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, dir)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.budget < self.models.len() {
            return bad(format!("budget {} is below the model count {}", self.budget, self.models.len()));
        }
        let mut ids = HashSet::new();
        for m in &self.models {
            if !ids.insert(m.id.as_str()) {
                return bad(format!("duplicate model id {}", m.id));
            }
            if !(m.external_weight.is_finite() && m.external_weight > 0.0) {
                return bad(format!("model {}: external_weight must be positive", m.id));
            }
        }
        if !self.prompt_template.contains("{query}") {
            return bad("prompt_template must contain {query}".into());
        }
        match (&self.extraction.builtin, &self.extraction.path) {
            (Some(_), Some(_)) => return bad("extraction: set either builtin or path, not both".into()),
            (None, None) => return bad("extraction: set builtin or path".into()),
            _ => {}
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn ruleset(&self) -> Result<Ruleset, ConfigError> {
        match (&self.extraction.builtin, &self.extraction.path) {
            (Some(name), None) => Ok(Ruleset::builtin(name)?),
            (None, Some(p)) => Ok(Ruleset::from_path(self.resolve(p))?),
            _ => Err(ConfigError::Invalid("extraction: set exactly one of builtin or path".into())),
        }
    }

    /// Stable hash of the configuration and mode.
    pub fn digest(&self, mode: &RunMode) -> String {
        let body = serde_json::to_vec(&(self, mode.to_string())).expect("config serializes");
        sha256_hex(body)[..16].to_string()
    }

    fn model(&self, id: &str) -> Result<&ModelConfig, ConfigError> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown model {id}")))
    }

    fn spec(m: &ModelConfig, order_index: usize, quota: usize) -> ModelSpec {
        ModelSpec {
            id: m.id.clone(),
            order_index,
            quota,
            external_weight: m.external_weight,
            params: SamplingParams {
                temperature: m.temperature,
                top_p: m.top_p,
                max_tokens: m.max_tokens,
            },
        }
    }

    pub fn model_specs(&self, mode: &RunMode) -> Result<Vec<ModelSpec>, ConfigError> {
        match mode {
            RunMode::SelfConsistency(id) => Ok(vec![Self::spec(self.model(id)?, 0, self.budget)]),
            RunMode::Switch | RunMode::BestOfN => {
                let quotas = allocate_budget(self.budget, self.models.len())
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(self
                    .models
                    .iter()
                    .zip(quotas)
                    .enumerate()
                    .map(|(i, (m, q))| Self::spec(m, i, q))
                    .collect())
            }
        }
    }

    pub fn switch_config(&self, mode: &RunMode, transport: Arc<dyn Transport>) -> Result<SwitchConfig, ConfigError> {
        let use_bon = matches!(mode, RunMode::BestOfN)
            || (matches!(mode, RunMode::Switch) && self.selection == SelectionKind::BestOfN);
        let selection = if use_bon {
            let scorer: Arc<dyn Scorer> = match &self.scorer {
                None | Some(ScorerConfig::Oracle) => Arc::new(OracleScorer),
                Some(ScorerConfig::Remote {
                    base_url,
                    api_key_env,
                    timeout_secs,
                }) => Arc::new(RemoteScorer::new(
                    base_url.clone(),
                    api_key_env.clone(),
                    Duration::from_secs_f64(timeout_secs.max(0.001)),
                    transport,
                )),
            };
            Selection::BestOfN(scorer)
        } else {
            Selection::WeightedVote
        };
        Ok(SwitchConfig {
            budget: self.budget,
            tie: self.tie_policy,
            norm: self.norm,
            internal_weights: self.internal_weights,
            early_exit: self.early_exit,
            selection,
        })
    }

    /// Builds every configured backend, optionally wrapped for record or
    /// replay against `store`.
    pub fn build_backends(
        &self,
        transport: Arc<dyn Transport>,
        wrap: Option<(ReplayMode, &Path)>,
    ) -> Result<BackendRegistry, ConfigError> {
        let mut reg = BackendRegistry::new();
        let mut fixtures: Vec<(PathBuf, DistributionFixture)> = Vec::new();
        for m in &self.models {
            let backend: Arc<dyn Backend> = match &m.backend {
                BackendConfig::Simulated { fixture, model, seed } => {
                    let path = self.resolve(fixture);
                    let loaded = match fixtures.iter().find(|(p, _)| p == &path) {
                        Some((_, f)) => f.clone(),
                        None => {
                            let f = DistributionFixture::from_path(&path)?;
                            fixtures.push((path, f.clone()));
                            f
                        }
                    };
                    let name = model.as_deref().unwrap_or(&m.id);
                    Arc::new(SimulatedModel::from_fixture(&m.id, &loaded, name, seed.unwrap_or(self.seed))?)
                }
                BackendConfig::Openai {
                    base_url,
                    model,
                    api_key_env,
                    supports_n,
                    timeout_secs,
                    retries,
                } => Arc::new(OpenAiBackend::new(
                    &m.id,
                    OpenAiSettings {
                        base_url: base_url.clone(),
                        model: model.clone(),
                        api_key_env: api_key_env.clone(),
                        supports_n: *supports_n,
                        timeout_secs: *timeout_secs,
                        retry: RetryPolicy {
                            max_retries: *retries,
                            ..RetryPolicy::default()
                        },
                    },
                    transport.clone(),
                )),
            };
            let backend = match wrap {
                Some((mode, dir)) => Arc::new(RecordReplay::new(backend, FixtureStore::new(dir), mode)) as Arc<dyn Backend>,
                None => backend,
            };
            reg.insert(backend);
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::UreqTransport;

    const BASE: &str = r#"
budget = 8
seed = 3

[[models]]
id = "m1"
backend = { kind = "simulated", fixture = "dist.json" }

[[models]]
id = "m2"
external_weight = 0.5
temperature = 1.0
[models.backend]
kind = "openai"
base_url = "http://localhost:9"
model = "tiny"
api_key_env = "TINY_KEY"
"#;

    fn cfg(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_toml_str(text, "/tmp")
    }

    #[test]
    fn parse_defaults() {
        let c = cfg(BASE).unwrap();
        assert_eq!(c.models.len(), 2);
        assert_eq!(c.models[0].external_weight, 1.0);
        assert!(c.early_exit);
        assert_eq!(c.tie_policy, TiePolicy::EarlierModel);
        assert_eq!(c.norm, NormDefinition::SampleCount);
        assert_eq!(c.ruleset().unwrap().kind(), crate::answers::AnswerKind::Numeric);
        let specs = c.model_specs(&RunMode::Switch).unwrap();
        assert_eq!(specs.iter().map(|s| s.quota).collect::<Vec<_>>(), vec![4, 4]);
        assert_eq!(specs[1].params.temperature, Some(1.0));
        let sc = c.model_specs(&RunMode::SelfConsistency("m2".into())).unwrap();
        assert_eq!((sc.len(), sc[0].quota), (1, 8));
        assert!(c.model_specs(&RunMode::SelfConsistency("m9".into())).is_err());
    }

    #[test]
    fn policies_and_selection() {
        let text = format!("tie_policy = {{ policy = \"seeded-random\", seed = 9 }}\nnorm = \"distinct-answers\"\ninternal_weights = \"uniform\"\nselection = \"best-of-n\"\n{BASE}");
        let c = cfg(&text).unwrap();
        assert_eq!(c.tie_policy, TiePolicy::SeededRandom { seed: 9 });
        assert_eq!(c.internal_weights, InternalWeights::Uniform);
        let sw = c.switch_config(&RunMode::Switch, Arc::new(UreqTransport)).unwrap();
        assert!(matches!(sw.selection, Selection::BestOfN(_)));
        let sc = c.switch_config(&RunMode::SelfConsistency("m1".into()), Arc::new(UreqTransport)).unwrap();
        assert!(matches!(sc.selection, Selection::WeightedVote));
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(cfg(&BASE.replace("budget = 8", "budget = 1")), Err(ConfigError::Invalid(_))));
        assert!(matches!(cfg(&BASE.replace("\"m2\"", "\"m1\"")), Err(ConfigError::Invalid(_))));
        assert!(matches!(cfg(&BASE.replace("0.5", "-1.0")), Err(ConfigError::Invalid(_))));
        assert!(matches!(cfg(&format!("bogus = 1\n{BASE}")), Err(ConfigError::Parse(_))));
        assert!(matches!(cfg(&format!("prompt_template = \"no slot\"\n{BASE}")), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("switch".parse::<RunMode>().unwrap(), RunMode::Switch);
        assert_eq!("bon".parse::<RunMode>().unwrap(), RunMode::BestOfN);
        assert_eq!("self-consistency:m1".parse::<RunMode>().unwrap(), RunMode::SelfConsistency("m1".into()));
        assert!("self-consistency:".parse::<RunMode>().is_err());
        assert!("vote".parse::<RunMode>().is_err());
    }

    #[test]
    fn digest_tracks_every_field() {
        let c = cfg(BASE).unwrap();
        assert_eq!(c.digest(&RunMode::Switch), cfg(BASE).unwrap().digest(&RunMode::Switch));
        assert_ne!(c.digest(&RunMode::Switch), c.digest(&RunMode::BestOfN));
        let variants = [
            BASE.replace("budget = 8", "budget = 10"),
            BASE.replace("seed = 3", "seed = 4"),
            BASE.replace("0.5", "0.6"),
            BASE.replace("temperature = 1.0", "temperature = 0.7"),
            BASE.replace("\"tiny\"", "\"tiny2\""),
            format!("early_exit = false\n{BASE}"),
        ];
        for v in variants {
            assert_ne!(cfg(&v).unwrap().digest(&RunMode::Switch), c.digest(&RunMode::Switch), "{v}");
        }
    }
}
