use serde::{Deserialize, Serialize};

use super::{CategoricalDist, TheoryError};

/// Strict comparisons treat differences within this band as equality, so
/// grid points that sit exactly on a boundary are not decided by rounding.
const STRICT_EPS: f64 = 1e-12;

fn gt(a: f64, b: f64) -> bool {
    a - b > STRICT_EPS
}

/// Mixing check for two models over a shared answer space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    /// Pooled correct mass `x1 + x2`.
    pub p: f64,
    /// Dominant-error gap `y1 - y2`.
    pub q: f64,
    pub m: usize,
    /// `P > 2/m`.
    pub necessary_holds: bool,
    /// `P + Q + x1 > 1` and `P - Q + x2 > 1`.
    pub sufficient_holds: bool,
    /// The correct answer is the strict maximum of `p1 + p2`.
    pub mixture_argmax_correct: bool,
    /// Both dominant incorrect masses sit on the same answer.
    pub shared_dominant_error: bool,
}

/// Largest incorrect mass and its index. This is the second-largest entry
/// when the correct answer leads, and the largest entry otherwise.
fn dominant_error(p: &CategoricalDist) -> (f64, usize) {
    let c = p.correct_index();
    p.probs()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != c)
        .fold((f64::NEG_INFINITY, usize::MAX), |(bv, bi), (i, &v)| {
            if v > bv {
                (v, i)
            } else {
                (bv, bi)
            }
        })
}

pub fn prop1_check(p1: &CategoricalDist, p2: &CategoricalDist) -> Result<Prop1Report, TheoryError> {
    p1.check_pair(p2)?;
    let c = p1.correct_index();
    let m = p1.len();
    let x1 = p1.correct_mass();
    let x2 = p2.correct_mass();
    let (y1, i1) = dominant_error(p1);
    let (y2, i2) = dominant_error(p2);
    let p = x1 + x2;
    let q = y1 - y2;
    let mixture: Vec<f64> = p1
        .probs()
        .iter()
        .zip(p2.probs())
        .map(|(a, b)| a + b)
        .collect();
    let mixture_argmax_correct = mixture
        .iter()
        .enumerate()
        .all(|(j, &v)| j == c || gt(mixture[c], v));
    Ok(Prop1Report {
        x1,
        x2,
        y1,
        y2,
        p,
        q,
        m,
        necessary_holds: gt(p, 2.0 / m as f64),
        sufficient_holds: gt(p + q + x1, 1.0) && gt(p - q + x2, 1.0),
        mixture_argmax_correct,
        shared_dominant_error: i1 == i2,
    })
}
