//! Exact probabilistic oracles for single-model majority voting and
//! two-model switching.
//!
//! Every quantity here is computed from declared answer distributions, not
//! from sampled runs, so it can serve as ground truth for the engine.

mod calls;
mod condition;
mod correlation;
mod dist;
mod exact;
mod prop1;
mod tails;

pub use calls::{consistent_prob, expected_calls, CallExpectation, ConsistencyProfile};
pub use condition::{
    label_query, theorem_condition, ConditionReport, DecompositionCheck, EventLabel,
    LabeledQuery, QueryPair,
};
pub use correlation::{correlation, Correlation};
pub use dist::CategoricalDist;
pub use exact::{
    composition_count, exact_ms_accuracy, exact_mv_accuracy, TieConvention, ENUMERATION_LIMIT,
};
pub use prop1::{prop1_check, Prop1Report};
pub use tails::{c_eps, w_eps_bound, WEpsBound};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("dimension mismatch: {left} vs {right} categories")]
    DimensionMismatch { left: usize, right: usize },
    #[error("correct-answer index mismatch: {left} vs {right}")]
    CorrectIndexMismatch { left: usize, right: usize },
    #[error("enumeration too large: {size} exceeds limit {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("budget {budget} is smaller than the number of models {models}")]
    BudgetTooSmall { budget: usize, models: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("event class {0} is empty")]
    EmptyEventClass(&'static str),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
}
