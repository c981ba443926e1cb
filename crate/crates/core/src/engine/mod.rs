//! Ordered multi-model sampling with consistency-gated early exit.

mod bon;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bon::{best_of_n_select, BonSelection, OracleScorer, RemoteScorer, Sample, Scorer, ScorerError};

use crate::answers::{AnswerHistogram, CanonicalAnswer, Ruleset};
use crate::backends::{BackendError, BackendRegistry, GenerationRequest, SamplingParams};
use crate::report::{QueryRow, RunReport};
use crate::voting::{weighted_vote, ModelWeighting, NormDefinition, ScoreTable, TiePolicy, VotingError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no models configured")]
    NoModels,
    #[error("budget {budget} is smaller than the number of models {models}")]
    BudgetTooSmall { budget: usize, models: usize },
    #[error("model quotas sum to {total}, above the budget {budget}")]
    BudgetExceeded { total: usize, budget: usize },
    #[error("invalid model list: {0}")]
    InvalidSpecs(String),
    #[error("no backend registered for model {0}")]
    UnknownBackend(String),
    #[error("query {query}: no model produced an extractable answer")]
    AllExtractionsFailed { query: String },
    #[error("query {query}, model {model} (after {calls_used} calls): {source}")]
    Backend {
        query: String,
        model: String,
        calls_used: usize,
        #[source]
        source: BackendError,
    },
    #[error("query {query}: {source}")]
    Scorer {
        query: String,
        #[source]
        source: ScorerError,
    },
    #[error(transparent)]
    Voting(#[from] VotingError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl EngineError {
    /// Samples already drawn when the error surfaced.
    pub fn calls_used(&self) -> usize {
        match self {
            EngineError::Backend { calls_used, .. } => *calls_used,
            _ => 0,
        }
    }
}

/// Splits `budget` samples over `models`: `budget / models` each, with the
/// remainder handed one apiece to the earliest models.
pub fn allocate_budget(budget: usize, models: usize) -> Result<Vec<usize>, EngineError> {
    if models == 0 {
        return Err(EngineError::NoModels);
    }
    if budget < models {
        return Err(EngineError::BudgetTooSmall { budget, models });
    }
    let (base, rem) = (budget / models, budget % models);
    Ok((0..models).map(|i| base + usize::from(i < rem)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Backend id in the registry.
    pub id: String,
    pub order_index: usize,
    pub quota: usize,
    pub external_weight: f64,
    pub params: SamplingParams,
}

impl ModelSpec {
    /// Specs for `ids` in order, with quotas from [`allocate_budget`] and
    /// unit external weights.
    pub fn ordered(ids: &[&str], budget: usize) -> Result<Vec<Self>, EngineError> {
        let quotas = allocate_budget(budget, ids.len())?;
        Ok(ids
            .iter()
            .zip(quotas)
            .enumerate()
            .map(|(i, (id, quota))| ModelSpec {
                id: id.to_string(),
                order_index: i,
                quota,
                external_weight: 1.0,
                params: SamplingParams::default(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InternalWeights {
    /// Entropy-derived consistency weight per model.
    #[default]
    Entropy,
    /// Every model's internal weight is 1, so votes are external-weighted
    /// counts.
    Uniform,
}

#[derive(Clone, Default)]
pub enum Selection {
    #[default]
    WeightedVote,
    BestOfN(Arc<dyn Scorer>),
}

impl std::fmt::Debug for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selection::WeightedVote => f.write_str("WeightedVote"),
            Selection::BestOfN(_) => f.write_str("BestOfN"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwitchConfig {
    pub budget: usize,
    pub tie: TiePolicy,
    pub norm: NormDefinition,
    pub internal_weights: InternalWeights,
    pub early_exit: bool,
    pub selection: Selection,
}

impl SwitchConfig {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            tie: TiePolicy::default(),
            norm: NormDefinition::default(),
            internal_weights: InternalWeights::default(),
            early_exit: true,
            selection: Selection::WeightedVote,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    /// Full prompt sent to every model.
    pub prompt: String,
    pub gold: Option<CanonicalAnswer>,
}

/// Everything one model produced on one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRound {
    pub model: String,
    pub quota: usize,
    pub samples: Vec<String>,
    pub answers: Vec<Option<CanonicalAnswer>>,
    /// `None` when no sample yielded an answer.
    pub histogram: Option<AnswerHistogram>,
    pub extraction_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchOutcome {
    pub final_answer: CanonicalAnswer,
    /// Only the models that were actually sampled.
    pub per_model: Vec<ModelRound>,
    pub calls_used: usize,
    pub exited_at: Option<usize>,
    /// Absent when a unanimous early round decided the query.
    pub score_table: Option<ScoreTable>,
    pub extraction_failures: usize,
}

impl SwitchOutcome {
    /// Entropy of the first model's histogram, if it produced any answer.
    pub fn first_entropy(&self) -> Option<f64> {
        self.per_model
            .first()
            .and_then(|r| r.histogram.as_ref())
            .map(AnswerHistogram::entropy_bits)
    }
}

fn validate_specs(specs: &[ModelSpec], budget: usize) -> Result<(), EngineError> {
    if specs.is_empty() {
        return Err(EngineError::NoModels);
    }
    for (i, s) in specs.iter().enumerate() {
        if s.order_index != i {
            return Err(EngineError::InvalidSpecs(format!(
                "model {} has order index {}, expected {i}",
                s.id, s.order_index
            )));
        }
        if s.quota == 0 {
            return Err(EngineError::InvalidSpecs(format!("model {} has quota 0", s.id)));
        }
    }
    let total: usize = specs.iter().map(|s| s.quota).sum();
    if total > budget {
        return Err(EngineError::BudgetExceeded { total, budget });
    }
    Ok(())
}

/// Runs the switch procedure on one query.
pub fn run_query(
    query: &Query,
    specs: &[ModelSpec],
    config: &SwitchConfig,
    rules: &Ruleset,
    backends: &BackendRegistry,
) -> Result<SwitchOutcome, EngineError> {
    validate_specs(specs, config.budget)?;
    let last = specs.len() - 1;
    let mut rounds: Vec<ModelRound> = Vec::with_capacity(specs.len());
    let mut calls_used = 0;
    for (i, spec) in specs.iter().enumerate() {
        let backend = backends
            .get(&spec.id)
            .ok_or_else(|| EngineError::UnknownBackend(spec.id.clone()))?;
        let samples = backend
            .generate(&GenerationRequest {
                query_id: query.id.clone(),
                prompt: query.prompt.clone(),
                params: spec.params.clone(),
                count: spec.quota,
                first_index: 0,
            })
            .map_err(|source| EngineError::Backend {
                query: query.id.clone(),
                model: spec.id.clone(),
                calls_used,
                source,
            })?;
        calls_used += spec.quota;
        let answers: Vec<Option<CanonicalAnswer>> = samples.iter().map(|s| rules.extract(s)).collect();
        let extraction_failures = answers.iter().filter(|a| a.is_none()).count();
        let histogram = AnswerHistogram::tally(answers.iter().flatten().cloned()).ok();
        let unanimous = extraction_failures == 0 && histogram.as_ref().is_some_and(AnswerHistogram::fully_consistent);
        rounds.push(ModelRound {
            model: spec.id.clone(),
            quota: spec.quota,
            samples,
            answers,
            histogram,
            extraction_failures,
        });
        if config.early_exit && i < last && unanimous {
            let final_answer = rounds[i].histogram.as_ref().expect("unanimous round has answers").first().clone();
            return Ok(SwitchOutcome {
                final_answer,
                per_model: rounds,
                calls_used,
                exited_at: Some(i),
                score_table: None,
                extraction_failures: 0,
            });
        }
    }

    let extraction_failures = rounds.iter().map(|r| r.extraction_failures).sum();
    let (final_answer, score_table) = select(query, specs, config, &rounds)?;
    Ok(SwitchOutcome {
        final_answer,
        per_model: rounds,
        calls_used,
        exited_at: None,
        score_table: Some(score_table),
        extraction_failures,
    })
}

fn select(
    query: &Query,
    specs: &[ModelSpec],
    config: &SwitchConfig,
    rounds: &[ModelRound],
) -> Result<(CanonicalAnswer, ScoreTable), EngineError> {
    let retained: Vec<(&AnswerHistogram, f64)> = rounds
        .iter()
        .zip(specs)
        .filter_map(|(r, s)| r.histogram.as_ref().map(|h| (h, s.external_weight)))
        .collect();
    if retained.is_empty() {
        return Err(EngineError::AllExtractionsFailed { query: query.id.clone() });
    }
    match &config.selection {
        Selection::WeightedVote => {
            let weighted: Vec<(&AnswerHistogram, ModelWeighting)> = retained
                .iter()
                .map(|&(h, ext)| {
                    let w = match config.internal_weights {
                        InternalWeights::Entropy => ModelWeighting::new(h, ext, config.norm),
                        InternalWeights::Uniform => ModelWeighting::without_internal(h, ext),
                    };
                    (h, w)
                })
                .collect();
            let table = weighted_vote(&weighted, config.tie)?;
            Ok((table.winner.clone(), table))
        }
        Selection::BestOfN(scorer) => {
            let samples: Vec<Sample> = rounds
                .iter()
                .flat_map(|r| {
                    r.samples.iter().zip(&r.answers).filter_map(|(text, a)| {
                        a.as_ref().map(|answer| Sample {
                            text: text.clone(),
                            answer: answer.clone(),
                            model: r.model.clone(),
                        })
                    })
                })
                .collect();
            let pick = best_of_n_select(query, &samples, scorer.as_ref()).map_err(|source| EngineError::Scorer {
                query: query.id.clone(),
                source,
            })?;
            let mut scores: Vec<(CanonicalAnswer, f64)> = Vec::new();
            for (s, &score) in samples.iter().zip(&pick.scores) {
                match scores.iter_mut().find(|(a, _)| a == &s.answer) {
                    Some((_, best)) => *best = best.max(score),
                    None => scores.push((s.answer.clone(), score)),
                }
            }
            let top = pick.scores[pick.index];
            let tied: Vec<CanonicalAnswer> = scores.iter().filter(|(_, s)| *s == top).map(|(a, _)| a.clone()).collect();
            let table = ScoreTable {
                scores,
                winner: pick.answer.clone(),
                tie_note: (tied.len() >= 2).then_some(tied),
            };
            Ok((pick.answer, table))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Upper bound on concurrently processed queries; 0 uses all cores.
    pub workers: usize,
    /// Abort on the first failing query instead of recording the error.
    pub fail_fast: bool,
    pub config_digest: String,
}

fn row(query: &Query, result: Result<SwitchOutcome, EngineError>) -> QueryRow {
    let gold = query.gold.as_ref().map(|g| g.value().to_string()).unwrap_or_default();
    match result {
        Ok(out) => QueryRow {
            id: query.id.clone(),
            correct: query.gold.as_ref() == Some(&out.final_answer),
            final_answer: Some(out.final_answer.value().to_string()),
            gold,
            calls: out.calls_used,
            exited_at: out.exited_at,
            first_entropy: out.first_entropy(),
            extraction_failures: out.extraction_failures,
            error: None,
        },
        Err(e) => QueryRow {
            id: query.id.clone(),
            final_answer: None,
            gold,
            correct: false,
            calls: e.calls_used(),
            exited_at: None,
            first_entropy: None,
            extraction_failures: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every query, in parallel across queries, and assembles a report in
/// input order. Per-query failures become error rows unless
/// `opts.fail_fast` is set.
pub fn run_dataset(
    queries: &[Query],
    specs: &[ModelSpec],
    config: &SwitchConfig,
    rules: &Ruleset,
    backends: &BackendRegistry,
    opts: &RunOptions,
) -> Result<RunReport, EngineError> {
    validate_specs(specs, config.budget)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| EngineError::Pool(e.to_string()))?;
    let run = |q: &Query| run_query(q, specs, config, rules, backends);
    let rows = pool.install(|| -> Result<Vec<QueryRow>, EngineError> {
        if opts.fail_fast {
            queries
                .par_iter()
                .map(|q| run(q).map(|out| row(q, Ok(out))))
                .collect()
        } else {
            Ok(queries.par_iter().map(|q| row(q, run(q))).collect())
        }
    })?;
    Ok(RunReport {
        config_digest: opts.config_digest.clone(),
        budget: config.budget,
        rows,
    })
}
