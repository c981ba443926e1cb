use serde::{Deserialize, Serialize};

use super::{CategoricalDist, TheoryError};

fn ln_choose(n: usize, k: usize) -> f64 {
    let lf = |x: usize| (1..=x).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

/// Probability that at least a `1 - eps` fraction of `k` samples land on
/// the correct answer.
pub fn c_eps(p: &CategoricalDist, k: usize, eps: f64) -> Result<f64, TheoryError> {
    if !(0.0..0.25).contains(&eps) {
        return Err(TheoryError::DomainError(format!("eps {eps} is outside [0, 0.25)")));
    }
    if k == 0 {
        return Err(TheoryError::DomainError("sample count must be at least 1".into()));
    }
    let q = p.correct_mass();
    // The small offset keeps (1 - eps) * k from rounding up past an integer.
    let threshold = (((1.0 - eps) * k as f64) - 1e-9).ceil().max(0.0) as usize;
    if q >= 1.0 {
        return Ok(1.0);
    }
    if q <= 0.0 {
        return Ok(if threshold == 0 { 1.0 } else { 0.0 });
    }
    let (lq, lr) = (q.ln(), (1.0 - q).ln());
    let total: f64 = (threshold..=k)
        .map(|x| (ln_choose(k, x) + x as f64 * lq + (k - x) as f64 * lr).exp())
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WEpsBound {
    /// Value of the closed form, which can exceed 1.
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub clamped: f64,
}

/// Method-of-types expression for the chance that some wrong answer takes at
/// least a `1 - 2 eps` share of `k` samples.
///
/// The expression is evaluated as written. It is not a valid upper bound on
/// the exact tail everywhere; see the tests below.
pub fn w_eps_bound(
    p: &CategoricalDist,
    k: usize,
    eps: f64,
    n_answers: usize,
) -> Result<WEpsBound, TheoryError> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(TheoryError::DomainError(format!("eps {eps} is outside (0, 0.25)")));
    }
    if n_answers < 2 {
        return Err(TheoryError::DomainError(format!(
            "need at least 2 answers, got {n_answers}"
        )));
    }
    let pmax = p.max_incorrect_mass();
    if pmax <= 0.0 {
        return Err(TheoryError::DomainError(
            "no probability on incorrect answers".into(),
        ));
    }
    let kf = k as f64;
    let eps0 = 2.0 * eps * ((2.0 * eps).log2() - ((n_answers - 1) as f64).log2());
    let log2_raw =
        (n_answers as f64 + 1.0) * (2.0 * kf * eps).log2() + kf * ((1.0 - 2.0 * eps) * pmax.log2() + eps0);
    let raw = log2_raw.exp2();
    Ok(WEpsBound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}
