use serde::{Deserialize, Serialize};

use super::{CategoricalDist, TheoryError};
use crate::engine::allocate_budget;

/// Probability that `k` independent samples from `p` all agree.
pub fn consistent_prob(p: &CategoricalDist, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let exp = i32::try_from(k).unwrap_or(i32::MAX);
    p.probs().iter().map(|&q| q.powi(exp)).sum::<f64>().min(1.0)
}

/// Per-model probability of a unanimous round. The last model always ends
/// the sequence, so its entry is pinned to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyProfile {
    probs: Vec<f64>,
}

impl ConsistencyProfile {
    pub fn new(mut probs: Vec<f64>) -> Result<Self, TheoryError> {
        if probs.is_empty() {
            return Err(TheoryError::DomainError("profile needs at least one model".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(TheoryError::DomainError(format!(
                "consistency probability {p} is outside [0, 1]"
            )));
        }
        *probs.last_mut().expect("non-empty") = 1.0;
        Ok(Self { probs })
    }

    /// Profile for models sampled with the quotas `allocate_budget` assigns.
    pub fn from_dists(dists: &[CategoricalDist], budget: usize) -> Result<Self, TheoryError> {
        let quotas = quotas(budget, dists.len())?;
        Self::new(
            dists
                .iter()
                .zip(quotas)
                .map(|(d, q)| consistent_prob(d, q))
                .collect(),
        )
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallExpectation {
    pub expected_samples: f64,
    pub cost_savings: f64,
}

fn quotas(budget: usize, models: usize) -> Result<Vec<usize>, TheoryError> {
    allocate_budget(budget, models).map_err(|_| TheoryError::BudgetTooSmall { budget, models })
}

/// Expected number of samples drawn when stopping at model `i` costs the
/// quotas of models `1..=i`.
pub fn expected_calls(budget: usize, profile: &ConsistencyProfile) -> Result<CallExpectation, TheoryError> {
    let quotas = quotas(budget, profile.len())?;
    let mut reach = 1.0;
    let mut spent = 0usize;
    let mut expected = 0.0;
    for (q, &p) in quotas.iter().zip(profile.probs()) {
        spent += q;
        expected += spent as f64 * reach * p;
        reach *= 1.0 - p;
    }
    Ok(CallExpectation {
        expected_samples: expected,
        cost_savings: (budget as f64 - expected) / budget as f64,
    })
}
