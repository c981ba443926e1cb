use serde::{Deserialize, Serialize};

use super::{c_eps, exact_ms_accuracy, exact_mv_accuracy, w_eps_bound, CategoricalDist, TheoryError, TieConvention};

/// Accuracy differences within this band count as no difference.
const NEUTRAL_BAND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPair {
    pub id: String,
    pub p1: CategoricalDist,
    pub p2: CategoricalDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventLabel {
    /// Switching does worse than the first model alone.
    Omega1,
    /// Switching does better than the first model alone.
    Omega2,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub pair: QueryPair,
    pub label: EventLabel,
    /// First model alone with the whole budget `2K`.
    pub mv_accuracy: f64,
    /// Both models with `K` samples each.
    pub ms_accuracy: f64,
}

/// Labels a query by comparing the first model's vote over `2k` samples
/// with the pooled vote over `k` samples per model.
pub fn label_query(pair: QueryPair, k: usize, tie: TieConvention) -> Result<LabeledQuery, TheoryError> {
    let mv = exact_mv_accuracy(&pair.p1, 2 * k, tie)?;
    let ms = exact_ms_accuracy(&pair.p1, &pair.p2, k, tie)?;
    let label = if mv - ms > NEUTRAL_BAND {
        EventLabel::Omega1
    } else if ms - mv > NEUTRAL_BAND {
        EventLabel::Omega2
    } else {
        EventLabel::Neutral
    };
    Ok(LabeledQuery {
        pair,
        label,
        mv_accuracy: mv,
        ms_accuracy: ms,
    })
}

/// Compares `E[XY]` with `E[X] E[Y]` for the product inside one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub mean_of_product: f64,
    pub product_of_means: f64,
    pub negatively_correlated: bool,
}

impl DecompositionCheck {
    fn from_pairs(xy: &[(f64, f64)]) -> Self {
        let n = xy.len() as f64;
        let mean_of_product = xy.iter().map(|(x, y)| x * y).sum::<f64>() / n;
        let ex = xy.iter().map(|(x, _)| x).sum::<f64>() / n;
        let ey = xy.iter().map(|(_, y)| y).sum::<f64>() / n;
        Self {
            mean_of_product,
            product_of_means: ex * ey,
            negatively_correlated: mean_of_product <= ex * ey,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_queries: usize,
    pub n_omega1: usize,
    pub n_omega2: usize,
    pub n_neutral: usize,
    /// Present when the improving class is non-empty.
    pub lhs_decomposition: Option<DecompositionCheck>,
    /// Present when the degrading class is non-empty.
    pub rhs_decomposition: Option<DecompositionCheck>,
}

impl ConditionReport {
    /// Errors unless both event classes are populated.
    pub fn require_both_classes(&self) -> Result<(), TheoryError> {
        if self.n_omega1 == 0 {
            return Err(TheoryError::EmptyEventClass("omega1"));
        }
        if self.n_omega2 == 0 {
            return Err(TheoryError::EmptyEventClass("omega2"));
        }
        Ok(())
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Evaluates the improvement condition on a labeled evaluation set. An empty
/// event class contributes zero to its side.
pub fn theorem_condition(
    eval_set: &[LabeledQuery],
    k: usize,
    eps: f64,
) -> Result<ConditionReport, TheoryError> {
    if eval_set.is_empty() {
        return Err(TheoryError::EmptyEvalSet);
    }
    let n_answers = eval_set.iter().map(|q| q.pair.p1.len()).max().unwrap_or(2);
    // A model with no incorrect mass cannot concentrate on a wrong answer.
    let w = |p: &CategoricalDist| -> Result<f64, TheoryError> {
        if p.max_incorrect_mass() <= 0.0 {
            Ok(0.0)
        } else {
            Ok(w_eps_bound(p, k, eps, n_answers)?.clamped)
        }
    };
    let n = eval_set.len() as f64;
    let omega1: Vec<&LabeledQuery> = eval_set.iter().filter(|q| q.label == EventLabel::Omega1).collect();
    let omega2: Vec<&LabeledQuery> = eval_set.iter().filter(|q| q.label == EventLabel::Omega2).collect();
    let alpha = omega1.len() as f64 / n;
    let beta = omega2.len() as f64 / n;

    let (lhs, lhs_decomposition) = if omega2.is_empty() {
        (0.0, None)
    } else {
        let mut xy = Vec::with_capacity(omega2.len());
        for q in &omega2 {
            xy.push((c_eps(&q.pair.p2, k, eps)?, 1.0 - w(&q.pair.p1)?));
        }
        let ex = mean(xy.iter().map(|v| v.0));
        let ey = mean(xy.iter().map(|v| v.1));
        let mv = mean(omega2.iter().map(|q| q.mv_accuracy));
        (beta * (ex * ey - mv), Some(DecompositionCheck::from_pairs(&xy)))
    };

    let (rhs, rhs_decomposition) = if omega1.is_empty() {
        (0.0, None)
    } else {
        let mut xy = Vec::with_capacity(omega1.len());
        for q in &omega1 {
            xy.push((c_eps(&q.pair.p1, k, eps)?, w(&q.pair.p2)?));
        }
        let ex = mean(xy.iter().map(|v| v.0));
        let ey = mean(xy.iter().map(|v| v.1));
        (alpha * (ex * ey + (1.0 - ex)), Some(DecompositionCheck::from_pairs(&xy)))
    };

    Ok(ConditionReport {
        holds: lhs > rhs,
        lhs,
        rhs,
        alpha,
        beta,
        n_queries: eval_set.len(),
        n_omega1: omega1.len(),
        n_omega2: omega2.len(),
        n_neutral: eval_set.len() - omega1.len() - omega2.len(),
        lhs_decomposition,
        rhs_decomposition,
    })
}
