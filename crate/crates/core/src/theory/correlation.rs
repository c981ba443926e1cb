use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::TheoryError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value under the null of zero correlation.
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation with a Student-t significance test.
pub fn correlation(pairs: &[(f64, f64)]) -> Result<Correlation, TheoryError> {
    let n = pairs.len();
    if n < 3 {
        return Err(TheoryError::DegenerateInput(format!("need at least 3 pairs, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(TheoryError::DegenerateInput("non-finite value".into()));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(TheoryError::DegenerateInput("first coordinate has zero variance".into()));
    }
    if syy == 0.0 {
        return Err(TheoryError::DegenerateInput("second coordinate has zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t2 = r * r * df / (1.0 - r * r);
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok(Correlation { r, p_value, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn descending_line() {
        let pairs: Vec<_> = (0..10).map(|i| (i as f64, 5.0 - 2.0 * i as f64)).collect();
        let c = correlation(&pairs).unwrap();
        assert!((c.r + 1.0).abs() < 1e-12);
        assert_eq!(c.p_value, 0.0);
    }

    #[test]
    fn independent_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<_> = (0..1000)
            .map(|_| (rng.random::<f64>() * 2.0, f64::from(rng.random_bool(0.5) as u8)))
            .collect();
        let c = correlation(&pairs).unwrap();
        assert!(c.r.abs() < 0.1, "{c:?}");
    }

    /// Reference: n = 5, r = 0.8 gives t = 2.3094 on 3 df, two-sided
    /// p = 0.1041 (standard t table).
    #[test]
    fn p_value_matches_t_table() {
        let pairs = [(1.0, 1.0), (2.0, 3.0), (3.0, 2.0), (4.0, 5.0), (5.0, 4.0)];
        let c = correlation(&pairs).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        assert!((c.p_value - 0.1041).abs() < 1e-4, "{}", c.p_value);
    }

    #[test]
    fn degenerate() {
        assert!(correlation(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).is_err());
        assert!(correlation(&[(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)]).is_err());
        assert!(correlation(&[(1.0, 2.0), (2.0, 3.0)]).is_err());
    }
}
