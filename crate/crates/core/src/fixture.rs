//! Per-query answer distributions for several models, shared by the
//! simulator and the exact oracles. The first listed answer is the correct
//! one.
//!
//! ```json
//! {"models": ["m1", "m2"],
//!  "queries": [{"id": "q1", "answers": ["1", "2", "3"],
//!               "probs": [[0.4, 0.6, 0.0], [0.4, 0.0, 0.6]]}]}
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::theory::CategoricalDist;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixture: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("query {query}: {reason}")]
    InvalidRow { query: String, reason: String },
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("duplicate query id {0}")]
    DuplicateQuery(String),
    #[error("fixture lists no models")]
    NoModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureQuery {
    pub id: String,
    /// Optional query text; defaults to the id when a dataset is derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub answers: Vec<String>,
    /// One row per model, aligned with `answers`.
    pub probs: Vec<Vec<f64>>,
}

impl FixtureQuery {
    /// Distribution of model column `col` with the first answer correct.
    pub fn dist(&self, col: usize) -> CategoricalDist {
        CategoricalDist::with_first_correct(self.probs[col].clone())
            .expect("rows are validated on load")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFixture {
    pub models: Vec<String>,
    pub queries: Vec<FixtureQuery>,
}

pub(crate) fn validate_row(query: &str, answers: &[String], probs: &[f64]) -> Result<(), FixtureError> {
    let bad = |reason: String| FixtureError::InvalidRow {
        query: query.to_string(),
        reason,
    };
    if answers.len() != probs.len() {
        return Err(bad(format!("{} answers but {} probabilities", answers.len(), probs.len())));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = answers.iter().find(|a| !seen.insert(a.as_str())) {
        return Err(bad(format!("answer {dup} listed twice")));
    }
    CategoricalDist::with_first_correct(probs.to_vec()).map_err(|e| bad(e.to_string()))?;
    Ok(())
}

impl DistributionFixture {
    pub fn validate(&self) -> Result<(), FixtureError> {
        if self.models.is_empty() {
            return Err(FixtureError::NoModels);
        }
        let mut ids = HashSet::new();
        for q in &self.queries {
            if !ids.insert(q.id.as_str()) {
                return Err(FixtureError::DuplicateQuery(q.id.clone()));
            }
            if q.probs.len() != self.models.len() {
                return Err(FixtureError::InvalidRow {
                    query: q.id.clone(),
                    reason: format!("{} probability rows for {} models", q.probs.len(), self.models.len()),
                });
            }
            for row in &q.probs {
                validate_row(&q.id, &q.answers, row)?;
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, FixtureError> {
        let f: Self = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn model_index(&self, model: &str) -> Result<usize, FixtureError> {
        self.models
            .iter()
            .position(|m| m == model)
            .ok_or_else(|| FixtureError::UnknownModel(model.to_string()))
    }
}
