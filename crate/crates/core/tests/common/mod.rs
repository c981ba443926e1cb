//! Monte Carlo reference estimators. Independent of the exact enumeration
//! code: counts are drawn sample by sample and scored directly.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn draw_counts(rng: &mut ChaCha8Rng, p: &[f64], k: usize, counts: &mut [usize]) {
    for _ in 0..k {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = p.len() - 1;
        for (j, &q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                pick = j;
                break;
            }
        }
        counts[pick] += 1;
    }
}

/// Share of trials where answer 0 reaches the maximum count (ties count as
/// correct).
pub fn mc_mv(p: &[f64], k: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut counts = vec![0; p.len()];
    let mut hits = 0usize;
    for _ in 0..trials {
        counts.iter_mut().for_each(|c| *c = 0);
        draw_counts(&mut rng, p, k, &mut counts);
        if counts.iter().all(|&c| c <= counts[0]) {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Same, with `k` samples from each of two models pooled.
pub fn mc_ms(p1: &[f64], p2: &[f64], k: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut counts = vec![0; p1.len()];
    let mut hits = 0usize;
    for _ in 0..trials {
        counts.iter_mut().for_each(|c| *c = 0);
        draw_counts(&mut rng, p1, k, &mut counts);
        draw_counts(&mut rng, p2, k, &mut counts);
        if counts.iter().all(|&c| c <= counts[0]) {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Random probability vector of length `m`, with a chance of exact zeros.
pub fn random_dist(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.into_iter().map(|x| x / s).collect();
        }
    }
}
