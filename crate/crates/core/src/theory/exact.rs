//! Exact probability that majority voting (one model) or pooled voting
//! (two models) lands on the correct answer.
//!
//! Single-model accuracy is a direct sum of multinomial probabilities over
//! all compositions of `K`. The two-model sum runs over pairs of
//! compositions; instead of visiting every pair it is factored category by
//! category: for each pooled count `t` of the correct answer, a dynamic
//! program over the remaining categories accumulates the mass of every pair
//! in which no other pooled count beats `t`. The result is the same finite
//! sum, evaluated in `O(m * K^4)` per threshold.

use serde::{Deserialize, Serialize};

use super::{CategoricalDist, TheoryError};

/// Upper bound on the number of compositions visited by single-model
/// enumeration.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Upper bound on cell updates performed by the two-model dynamic program.
const PAIR_WORK_LIMIT: u128 = 20_000_000_000;

/// How a tie between the correct answer and an incorrect one is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieConvention {
    /// The correct answer only needs to attain the maximum.
    #[default]
    TiesCorrect,
    /// The correct answer must be the unique maximum.
    TiesLose,
    /// A k-way tie that includes the correct answer scores 1/k.
    Split,
    /// Pooled ties go to the answer with the larger first-model count; ties
    /// that survive that are split uniformly. This is what the engine's
    /// earlier-model tie policy does in expectation. For a single model it
    /// coincides with `Split`.
    EarlierModel,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

fn binomial_u128(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of ways to split `k` samples across `parts` categories.
pub fn composition_count(k: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(k == 0);
    }
    binomial_u128((k + parts - 1) as u128, (parts - 1) as u128)
}

/// Visits every composition of `total` into `parts` non-negative integers.
fn for_each_composition(total: usize, parts: usize, mut f: impl FnMut(&[usize])) {
    let mut counts = vec![0usize; parts];
    if parts == 0 {
        return;
    }
    counts[parts - 1] = total;
    loop {
        f(&counts);
        // Move one unit leftward: find the rightmost non-last position that
        // can be incremented, mirroring odometer order.
        let last = counts[parts - 1];
        if parts == 1 {
            return;
        }
        let mut i = parts - 2;
        if last > 0 {
            counts[i] += 1;
            counts[parts - 1] = last - 1;
            continue;
        }
        // last == 0: carry
        loop {
            if counts[i] > 0 {
                let v = counts[i];
                counts[i] = 0;
                if i == 0 {
                    return;
                }
                counts[i - 1] += 1;
                counts[parts - 1] = v - 1;
                break;
            }
            if i == 0 {
                return;
            }
            i -= 1;
        }
    }
}

fn outcome_weight(correct: usize, rival_max: usize, rivals_at_max: usize, tie: TieConvention) -> f64 {
    use std::cmp::Ordering::*;
    match correct.cmp(&rival_max) {
        Greater => 1.0,
        Less => 0.0,
        Equal => match tie {
            TieConvention::TiesCorrect => 1.0,
            TieConvention::TiesLose => 0.0,
            TieConvention::Split | TieConvention::EarlierModel => {
                1.0 / (1 + rivals_at_max) as f64
            }
        },
    }
}

/// Probability that a plurality vote over `k` samples from `p` picks the
/// correct answer.
pub fn exact_mv_accuracy(p: &CategoricalDist, k: usize, tie: TieConvention) -> Result<f64, TheoryError> {
    if k == 0 {
        return Err(TheoryError::DomainError("sample count must be at least 1".into()));
    }
    let c = p.correct_index();
    let probs = p.probs();
    // Zero-mass categories always stay at zero and can never tie a
    // positive count, so they are left out of the enumeration.
    let support: Vec<usize> = (0..p.len()).filter(|&j| j == c || probs[j] > 0.0).collect();
    let size = composition_count(k, support.len());
    if size > ENUMERATION_LIMIT {
        return Err(TheoryError::EnumerationTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let pos_c = support.iter().position(|&j| j == c).expect("correct index in support");
    let lnf = ln_factorials(k);
    let ln_p: Vec<f64> = support.iter().map(|&j| probs[j].ln()).collect();
    let mut acc = CompensatedSum::default();
    for_each_composition(k, support.len(), |x| {
        let xc = x[pos_c];
        let mut rival_max = 0;
        let mut at_max = 0;
        for (i, &xi) in x.iter().enumerate() {
            if i == pos_c {
                continue;
            }
            if xi > rival_max {
                rival_max = xi;
                at_max = 1;
            } else if xi == rival_max {
                at_max += 1;
            }
        }
        let w = outcome_weight(xc, rival_max, at_max, tie);
        if w == 0.0 {
            return;
        }
        let mut ln_pmf = lnf[k];
        for (i, &xi) in x.iter().enumerate() {
            if xi > 0 {
                ln_pmf += xi as f64 * ln_p[i] - lnf[xi];
            }
        }
        if ln_pmf.is_finite() {
            acc.add(w * ln_pmf.exp());
        }
    });
    Ok(acc.value().clamp(0.0, 1.0))
}

/// `(k p)^x / x!` for `x = 0..=k`.
fn scaled_powers(p: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    let mut v = 1.0;
    out.push(v);
    for x in 1..=k {
        v *= k as f64 * p / x as f64;
        out.push(v);
    }
    out
}

/// Probability that pooling `k` samples from each of `p1` and `p2` and
/// voting on the pooled counts picks the correct answer.
pub fn exact_ms_accuracy(
    p1: &CategoricalDist,
    p2: &CategoricalDist,
    k: usize,
    tie: TieConvention,
) -> Result<f64, TheoryError> {
    p1.check_pair(p2)?;
    if k == 0 {
        return Err(TheoryError::DomainError("sample count must be at least 1".into()));
    }
    let c = p1.correct_index();
    let m = p1.len();
    let others: Vec<usize> = (0..m)
        .filter(|&j| j != c && (p1.probs()[j] > 0.0 || p2.probs()[j] > 0.0))
        .collect();
    let track_ties = matches!(tie, TieConvention::Split | TieConvention::EarlierModel);
    let tau_dim = if track_ties { others.len() + 1 } else { 1 };
    let side = (k + 1) as u128;
    let runs = if tie == TieConvention::EarlierModel {
        (2 * k as u128 + 1) * side
    } else {
        2 * k as u128 + 1
    };
    let work = runs * (others.len().max(1) as u128) * side.pow(4) * tau_dim as u128;
    if work > PAIR_WORK_LIMIT {
        return Err(TheoryError::EnumerationTooLarge {
            size: work,
            limit: PAIR_WORK_LIMIT,
        });
    }

    let a: Vec<Vec<f64>> = (0..m).map(|j| scaled_powers(p1.probs()[j], k)).collect();
    let b: Vec<Vec<f64>> = (0..m).map(|j| scaled_powers(p2.probs()[j], k)).collect();
    // Undo the k^x scaling: multiply by (k! / k^k) for each model.
    let ln_fk: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    let scale = (2.0 * (ln_fk - k as f64 * (k as f64).ln())).exp();

    let dp = PairDp {
        k,
        others: &others,
        a: &a,
        b: &b,
        tau_dim,
        zero1: (0..m).map(|j| p1.probs()[j] == 0.0).collect(),
        zero2: (0..m).map(|j| p2.probs()[j] == 0.0).collect(),
    };

    let mut acc = CompensatedSum::default();
    for t in 0..=2 * k {
        let xa_range = t.saturating_sub(k)..=t.min(k);
        match tie {
            TieConvention::EarlierModel => {
                for xa in xa_range {
                    let ya = t - xa;
                    let table = dp.run(t, tie, xa);
                    let rest = table.tail(k - xa, k - ya);
                    acc.add(a[c][xa] * b[c][ya] * rest);
                }
            }
            _ => {
                let table = dp.run(t, tie, 0);
                for xa in xa_range {
                    let ya = t - xa;
                    let rest = table.tail(k - xa, k - ya);
                    acc.add(a[c][xa] * b[c][ya] * rest);
                }
            }
        }
    }
    Ok((acc.value() * scale).clamp(0.0, 1.0))
}

struct PairDp<'a> {
    k: usize,
    others: &'a [usize],
    a: &'a [Vec<f64>],
    b: &'a [Vec<f64>],
    tau_dim: usize,
    zero1: Vec<bool>,
    zero2: Vec<bool>,
}

struct DpTable {
    side: usize,
    tau_dim: usize,
    cells: Vec<f64>,
}

impl DpTable {
    fn idx(&self, u1: usize, u2: usize, tau: usize) -> usize {
        (u1 * self.side + u2) * self.tau_dim + tau
    }

    /// Mass of states that used exactly `u1`/`u2` samples on the other
    /// categories, each weighted by its share of the tie.
    fn tail(&self, u1: usize, u2: usize) -> f64 {
        (0..self.tau_dim)
            .map(|tau| self.cells[self.idx(u1, u2, tau)] / (1 + tau) as f64)
            .sum()
    }
}

impl PairDp<'_> {
    /// Runs the category recursion for correct pooled count `t`
    /// (`xa` is the correct answer's first-model count, used only by the
    /// earlier-model convention).
    fn run(&self, t: usize, tie: TieConvention, xa: usize) -> DpTable {
        let side = self.k + 1;
        let mut cur = DpTable {
            side,
            tau_dim: self.tau_dim,
            cells: vec![0.0; side * side * self.tau_dim],
        };
        let start = cur.idx(0, 0, 0);
        cur.cells[start] = 1.0;
        for &j in self.others {
            let mut next = DpTable {
                side,
                tau_dim: self.tau_dim,
                cells: vec![0.0; side * side * self.tau_dim],
            };
            let max_x = if self.zero1[j] { 0 } else { self.k };
            let max_y = if self.zero2[j] { 0 } else { self.k };
            for u1 in 0..side {
                for u2 in 0..side {
                    for tau in 0..self.tau_dim {
                        let f = cur.cells[cur.idx(u1, u2, tau)];
                        if f == 0.0 {
                            continue;
                        }
                        for xj in 0..=max_x.min(self.k - u1) {
                            if xj > t {
                                break;
                            }
                            let fx = f * self.a[j][xj];
                            for yj in 0..=max_y.min(self.k - u2) {
                                let z = xj + yj;
                                if z > t {
                                    break;
                                }
                                let new_tau = if z < t {
                                    Some(tau)
                                } else {
                                    match tie {
                                        TieConvention::TiesCorrect => Some(tau),
                                        TieConvention::TiesLose => None,
                                        TieConvention::Split => Some(tau + 1),
                                        TieConvention::EarlierModel => match xj.cmp(&xa) {
                                            std::cmp::Ordering::Less => Some(tau),
                                            std::cmp::Ordering::Equal => Some(tau + 1),
                                            std::cmp::Ordering::Greater => None,
                                        },
                                    }
                                };
                                if let Some(nt) = new_tau {
                                    let i = next.idx(u1 + xj, u2 + yj, nt);
                                    next.cells[i] += fx * self.b[j][yj];
                                }
                            }
                        }
                    }
                }
            }
            cur = next;
        }
        cur
    }
}
