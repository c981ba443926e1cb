use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_request, Backend, BackendError, BackendErrorKind, GenerationRequest};
use crate::fixture::{DistributionFixture, FixtureError};
use crate::hashing::sha256_parts;

/// Completion text emitted by the simulator; `{}` is the drawn answer.
pub const SIM_TEMPLATE: &str = "The answer is {}.";

#[derive(Debug, Clone)]
struct QueryDist {
    answers: Vec<String>,
    cumulative: Vec<f64>,
}

/// Draws answers from a declared distribution per query id. Sample `i` of a
/// query depends only on `(seed, backend id, query id, i)`, so results do
/// not depend on call order or batching.
#[derive(Debug, Clone)]
pub struct SimulatedModel {
    id: String,
    seed: u64,
    per_query: BTreeMap<String, QueryDist>,
}

impl SimulatedModel {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            seed,
            per_query: BTreeMap::new(),
        }
    }

    /// Adds or replaces the distribution for one query.
    pub fn with_query(
        mut self,
        query_id: impl Into<String>,
        answers: Vec<String>,
        probs: &[f64],
    ) -> Result<Self, FixtureError> {
        let query_id = query_id.into();
        crate::fixture::validate_row(&query_id, &answers, probs)?;
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        self.per_query.insert(query_id, QueryDist { answers, cumulative });
        Ok(self)
    }

    /// Simulator for column `model` of a distribution fixture.
    pub fn from_fixture(
        id: impl Into<String>,
        fixture: &DistributionFixture,
        model: &str,
        seed: u64,
    ) -> Result<Self, FixtureError> {
        let col = fixture.model_index(model)?;
        let mut sim = Self::new(id, seed);
        for q in &fixture.queries {
            sim = sim.with_query(q.id.clone(), q.answers.clone(), &q.probs[col])?;
        }
        Ok(sim)
    }

    fn draw<'a>(&self, query_id: &str, dist: &'a QueryDist, index: usize) -> &'a str {
        let digest = sha256_parts(&[
            &self.seed.to_le_bytes(),
            self.id.as_bytes(),
            query_id.as_bytes(),
            &(index as u64).to_le_bytes(),
        ]);
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
        // Rounding can leave the last cumulative value just below 1; fall
        // back to the last answer with positive mass.
        let i = dist
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| {
                let last = dist.cumulative.last().copied().unwrap_or(0.0);
                dist.cumulative.iter().position(|&c| c >= last).unwrap_or(0)
            });
        &dist.answers[i]
    }
}

impl Backend for SimulatedModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        check_request(&self.id, req)?;
        let dist = self
            .per_query
            .get(&req.query_id)
            .ok_or_else(|| BackendError::new(&self.id, BackendErrorKind::UnknownQuery(req.query_id.clone())))?;
        Ok((req.first_index..req.first_index + req.count)
            .map(|i| SIM_TEMPLATE.replace("{}", self.draw(&req.query_id, dist, i)))
            .collect())
    }
}
