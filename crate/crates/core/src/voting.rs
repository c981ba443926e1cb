//! Majority and entropy-weighted voting over per-model answer histograms.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{AnswerHistogram, CanonicalAnswer};

#[derive(Debug, Error)]
pub enum VotingError {
    #[error("weighted vote needs at least one model")]
    NoModels,
    #[error("model {index}: bias {bias} does not match 1/{total}")]
    BiasMismatch { index: usize, bias: f64, total: usize },
    #[error("model {index}: external weight must be positive and finite, got {weight}")]
    InvalidExternalWeight { index: usize, weight: f64 },
}

/// How co-maximal answers are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum TiePolicy {
    /// Prefer the answer with the larger count in the earliest model, then
    /// the next model, and so on; remaining ties go to the first-seen answer.
    #[default]
    EarlierModel,
    /// Smallest canonical answer wins.
    Lexicographic,
    /// Uniform choice among the tied answers, reproducible from the seed.
    SeededRandom { seed: u64 },
}

/// Denominator used to normalize entropy in the internal weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormDefinition {
    /// `log2(samples tallied)`: the maximum entropy reachable with that many samples.
    #[default]
    SampleCount,
    /// `log2(distinct answers)`.
    DistinctAnswers,
}

impl NormDefinition {
    pub fn norm(self, h: &AnswerHistogram) -> f64 {
        match self {
            NormDefinition::SampleCount => (h.total() as f64).log2(),
            NormDefinition::DistinctAnswers => (h.distinct() as f64).log2(),
        }
    }
}

/// Consistency weight of one model on one query:
/// `bias + (1 - bias) * (1 - H / norm)` with `bias = 1/total`, or 1 when
/// `norm` is zero. Always lies in `[bias, 1]`.
pub fn internal_weight(h: &AnswerHistogram, norm: NormDefinition) -> f64 {
    let bias = 1.0 / h.total() as f64;
    let n = norm.norm(h);
    if n <= 0.0 {
        return 1.0;
    }
    let w = bias + (1.0 - bias) * (1.0 - h.entropy_bits() / n);
    w.clamp(bias, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelWeighting {
    pub internal: f64,
    pub external: f64,
    pub bias: f64,
}

impl ModelWeighting {
    pub fn new(h: &AnswerHistogram, external: f64, norm: NormDefinition) -> Self {
        Self {
            internal: internal_weight(h, norm),
            external,
            bias: 1.0 / h.total() as f64,
        }
    }

    /// Internal weight pinned to 1 (the "no internal weights" ablation).
    pub fn without_internal(h: &AnswerHistogram, external: f64) -> Self {
        Self {
            internal: 1.0,
            external,
            bias: 1.0 / h.total() as f64,
        }
    }

    pub fn product(&self) -> f64 {
        self.internal * self.external
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// Scores in pooled first-seen order.
    pub scores: Vec<(CanonicalAnswer, f64)>,
    pub winner: CanonicalAnswer,
    /// All co-maximal answers, present only when there are at least two.
    pub tie_note: Option<Vec<CanonicalAnswer>>,
}

impl ScoreTable {
    pub fn score(&self, answer: &CanonicalAnswer) -> Option<f64> {
        self.scores
            .iter()
            .find(|(a, _)| a == answer)
            .map(|(_, s)| *s)
    }

    /// Winner plus any tied answers.
    pub fn top_set(&self) -> Vec<CanonicalAnswer> {
        self.tie_note
            .clone()
            .unwrap_or_else(|| vec![self.winner.clone()])
    }
}

const TIE_RTOL: f64 = 1e-12;

fn co_maximal(scores: &[(CanonicalAnswer, f64)]) -> Vec<usize> {
    let best = scores
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_RTOL * best.abs().max(1.0);
    scores
        .iter()
        .enumerate()
        .filter(|(_, (_, s))| best - *s <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Picks one index out of `tied` (indices into `scores`, in pooled
/// first-seen order).
fn break_tie(
    tied: &[usize],
    scores: &[(CanonicalAnswer, f64)],
    models: &[&AnswerHistogram],
    tie: TiePolicy,
) -> usize {
    if tied.len() == 1 {
        return tied[0];
    }
    match tie {
        TiePolicy::EarlierModel => {
            // `max_by_key` keeps the last maximum, so scan in reverse to
            // settle the remaining ties on the first-seen answer.
            *tied
                .iter()
                .rev()
                .max_by_key(|&&i| {
                    models
                        .iter()
                        .map(|h| h.count(&scores[i].0))
                        .collect::<Vec<_>>()
                })
                .expect("non-empty tie set")
        }
        TiePolicy::Lexicographic => *tied
            .iter()
            .min_by(|&&a, &&b| scores[a].0.cmp(&scores[b].0))
            .expect("non-empty tie set"),
        TiePolicy::SeededRandom { seed } => {
            let mut sorted = tied.to_vec();
            sorted.sort_by(|&a, &b| scores[a].0.cmp(&scores[b].0));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            *sorted.choose(&mut rng).expect("non-empty tie set")
        }
    }
}

fn table(scores: Vec<(CanonicalAnswer, f64)>, models: &[&AnswerHistogram], tie: TiePolicy) -> ScoreTable {
    let tied = co_maximal(&scores);
    let pick = break_tie(&tied, &scores, models, tie);
    let tie_note = (tied.len() >= 2).then(|| tied.iter().map(|&i| scores[i].0.clone()).collect());
    ScoreTable {
        winner: scores[pick].0.clone(),
        scores,
        tie_note,
    }
}

/// Plurality answer of a single histogram.
pub fn majority_vote(h: &AnswerHistogram, tie: TiePolicy) -> CanonicalAnswer {
    let scores = h.iter().map(|(a, c)| (a.clone(), c as f64)).collect();
    table(scores, &[h], tie).winner
}

/// `score(a) = sum_i internal_i * external_i * count(a, model_i)`, argmax
/// resolved with `tie`.
pub fn weighted_vote(
    per_model: &[(&AnswerHistogram, ModelWeighting)],
    tie: TiePolicy,
) -> Result<ScoreTable, VotingError> {
    if per_model.is_empty() {
        return Err(VotingError::NoModels);
    }
    let mut scores: Vec<(CanonicalAnswer, f64)> = Vec::new();
    for (index, (h, w)) in per_model.iter().enumerate() {
        let expected_bias = 1.0 / h.total() as f64;
        if (w.bias - expected_bias).abs() > 1e-12 {
            return Err(VotingError::BiasMismatch {
                index,
                bias: w.bias,
                total: h.total(),
            });
        }
        if !(w.external.is_finite() && w.external > 0.0) {
            return Err(VotingError::InvalidExternalWeight {
                index,
                weight: w.external,
            });
        }
        let factor = w.product();
        for (answer, count) in h.iter() {
            let add = factor * count as f64;
            match scores.iter_mut().find(|(a, _)| a == answer) {
                Some((_, s)) => *s += add,
                None => scores.push((answer.clone(), add)),
            }
        }
    }
    let models: Vec<&AnswerHistogram> = per_model.iter().map(|(h, _)| *h).collect();
    Ok(table(scores, &models, tie))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answers::{AnswerKind, AnswerHistogram};

    fn a(s: &str) -> CanonicalAnswer {
        CanonicalAnswer::parse(s, AnswerKind::Choice).unwrap()
    }

    fn hist(spec: &[(&str, usize)]) -> AnswerHistogram {
        AnswerHistogram::from_counts(spec.iter().map(|(s, c)| (a(s), *c))).unwrap()
    }

    /// `bias + (1-bias)(1 - H/log2 n)` evaluated with the entropy built from
    /// `log2` of exact rationals `c/n`, term by term, independently of
    /// `AnswerHistogram::entropy_bits`.
    fn eq2_oracle(counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let bias = 1.0 / n as f64;
        let norm = (n as f64).log2();
        if norm == 0.0 {
            return 1.0;
        }
        // H = log2 n - (1/n) sum c log2 c
        let s: f64 = counts.iter().map(|&c| c as f64 * (c as f64).log2()).sum();
        let h = norm - s / n as f64;
        bias + (1.0 - bias) * (1.0 - h / norm)
    }

    #[test]
    fn internal_weight_examples() {
        let ns = NormDefinition::SampleCount;
        assert_eq!(internal_weight(&hist(&[("A", 5)]), ns), 1.0);
        assert_eq!(internal_weight(&hist(&[("A", 1)]), ns), 1.0);
        let w = internal_weight(&hist(&[("A", 3), ("B", 2)]), ns);
        assert!((w - eq2_oracle(&[3, 2])).abs() < 1e-12);
        assert!((w - 0.665_467).abs() < 1e-6, "{w}");
    }

    #[test]
    fn internal_weight_extremes() {
        let ns = NormDefinition::SampleCount;
        let all_distinct = hist(&[("A", 1), ("B", 1), ("C", 1), ("D", 1), ("E", 1)]);
        assert!((internal_weight(&all_distinct, ns) - 0.2).abs() < 1e-12);
        let w = internal_weight(&hist(&[("A", 3), ("B", 2)]), NormDefinition::DistinctAnswers);
        assert!((w - (0.2 + 0.8 * (1.0 - 0.970_950_594_454_668_5))).abs() < 1e-9);
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(&hist(&[("A", 3), ("B", 2)]), TiePolicy::default()), a("A"));
        assert_eq!(
            majority_vote(&hist(&[("B", 2), ("A", 2)]), TiePolicy::Lexicographic),
            a("A")
        );
        assert_eq!(majority_vote(&hist(&[("B", 2), ("A", 2)]), TiePolicy::EarlierModel), a("B"));
        assert_eq!(majority_vote(&hist(&[("A", 1)]), TiePolicy::default()), a("A"));
    }

    #[test]
    fn seeded_random_ties_are_reproducible() {
        let h = hist(&[("A", 2), ("B", 2), ("C", 2)]);
        let picks: Vec<_> = (0..32)
            .map(|seed| majority_vote(&h, TiePolicy::SeededRandom { seed }))
            .collect();
        let again: Vec<_> = (0..32)
            .map(|seed| majority_vote(&h, TiePolicy::SeededRandom { seed }))
            .collect();
        assert_eq!(picks, again);
        for x in ["A", "B", "C"] {
            assert!(picks.contains(&a(x)), "seeded ties never picked {x}");
        }
    }

    #[test]
    fn uniform_model_outvotes_split_models() {
        let ns = NormDefinition::SampleCount;
        let m1 = hist(&[("A", 3), ("B", 2)]);
        let m2 = hist(&[("B", 3), ("A", 2)]);
        let m3 = hist(&[("C", 5)]);
        let per: Vec<_> = [&m1, &m2, &m3]
            .into_iter()
            .map(|h| (h, ModelWeighting::new(h, 1.0, ns)))
            .collect();
        let t = weighted_vote(&per, TiePolicy::default()).unwrap();
        assert_eq!(t.winner, a("C"));
        assert!(t.tie_note.is_none());
        assert!((t.score(&a("A")).unwrap() - t.score(&a("B")).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_model_reduces_to_majority() {
        let h = hist(&[("A", 3), ("B", 2)]);
        for ext in [0.5, 1.0, 7.0] {
            let t = weighted_vote(
                &[(&h, ModelWeighting::new(&h, ext, NormDefinition::SampleCount))],
                TiePolicy::default(),
            )
            .unwrap();
            assert_eq!(t.winner, a("A"));
        }
    }

    #[test]
    fn symmetric_models_tie_to_earlier() {
        let m1 = hist(&[("A", 2)]);
        let m2 = hist(&[("B", 2)]);
        let per = [
            (&m1, ModelWeighting::new(&m1, 1.0, NormDefinition::SampleCount)),
            (&m2, ModelWeighting::new(&m2, 1.0, NormDefinition::SampleCount)),
        ];
        let t = weighted_vote(&per, TiePolicy::EarlierModel).unwrap();
        assert_eq!(t.winner, a("A"));
        assert_eq!(t.tie_note, Some(vec![a("A"), a("B")]));
        // The opposite order flips the preference.
        let t = weighted_vote(&[per[1], per[0]], TiePolicy::EarlierModel).unwrap();
        assert_eq!(t.winner, a("B"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(weighted_vote(&[], TiePolicy::default()), Err(VotingError::NoModels)));
        let h = hist(&[("A", 2)]);
        let mut w = ModelWeighting::new(&h, 1.0, NormDefinition::SampleCount);
        w.bias = 0.1;
        assert!(matches!(
            weighted_vote(&[(&h, w)], TiePolicy::default()),
            Err(VotingError::BiasMismatch { .. })
        ));
        let w = ModelWeighting::new(&h, 0.0, NormDefinition::SampleCount);
        assert!(matches!(
            weighted_vote(&[(&h, w)], TiePolicy::default()),
            Err(VotingError::InvalidExternalWeight { .. })
        ));
    }
}
