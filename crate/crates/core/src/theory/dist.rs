use serde::{Deserialize, Serialize};

use super::TheoryError;

const SUM_TOL: f64 = 1e-12;

/// Probability vector over an answer space with a designated correct answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    probs: Vec<f64>,
    correct: usize,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>, correct_index: usize) -> Result<Self, TheoryError> {
        if probs.len() < 2 {
            return Err(TheoryError::InvalidDistribution(format!(
                "need at least 2 categories, got {}",
                probs.len()
            )));
        }
        if correct_index >= probs.len() {
            return Err(TheoryError::InvalidDistribution(format!(
                "correct index {correct_index} out of range for {} categories",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(TheoryError::InvalidDistribution(format!(
                "probability {p} is not a finite non-negative number"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(TheoryError::InvalidDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            probs,
            correct: correct_index,
        })
    }

    /// Correct answer at index 0.
    pub fn with_first_correct(probs: Vec<f64>) -> Result<Self, TheoryError> {
        Self::new(probs, 0)
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(weights: Vec<f64>, correct_index: usize) -> Result<Self, TheoryError> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(TheoryError::InvalidDistribution(format!(
                "weights sum to {sum}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect(), correct_index)
    }

    pub fn uniform(m: usize) -> Result<Self, TheoryError> {
        Self::new(vec![1.0 / m as f64; m], 0)
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

    pub fn correct_index(&self) -> usize {
        self.correct
    }

    pub fn correct_mass(&self) -> f64 {
        self.probs[self.correct]
    }

    /// Largest probability on any incorrect answer.
    pub fn max_incorrect_mass(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.correct)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_pair(&self, other: &Self) -> Result<(), TheoryError> {
        if self.len() != other.len() {
            return Err(TheoryError::DimensionMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        if self.correct != other.correct {
            return Err(TheoryError::CorrectIndexMismatch {
                left: self.correct,
                right: other.correct,
            });
        }
        Ok(())
    }
}
