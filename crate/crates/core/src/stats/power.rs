use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::{resample_rng, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    /// `mean(a) − mean(b)`.
    pub observed_diff: f64,
    /// All relabellings enumerated instead of sampled.
    pub exhaustive: bool,
    pub permutations: u64,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if c > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    c
}

/// Two-sided permutation test on the difference of group means of absolute
/// errors.
///
/// When the number of distinct relabellings does not exceed `n_perm` they
/// are all enumerated and `p` is the exact share at least as extreme as the
/// observed split. Otherwise `n_perm` random relabellings give
/// `p = (count + 1) / (n_perm + 1)`.
pub fn mae_permutation_test(
    errors_a: &[f64],
    errors_b: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<PermutationResult, StatsError> {
    let (na, nb) = (errors_a.len(), errors_b.len());
    if na == 0 || nb == 0 {
        return Err(StatsError::NoData("both groups need errors".into()));
    }
    if errors_a.iter().chain(errors_b).any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite error".into()));
    }
    let pooled: Vec<f64> = errors_a.iter().chain(errors_b).copied().collect();
    let n = pooled.len();
    let total: f64 = pooled.iter().sum();
    let stat = |sum_a: f64| (sum_a / na as f64 - (total - sum_a) / nb as f64).abs();
    let sum_a: f64 = errors_a.iter().sum();
    let observed_diff = sum_a / na as f64 - (total - sum_a) / nb as f64;
    let threshold = observed_diff.abs() - 1e-12 * observed_diff.abs().max(1.0);

    let combos = binomial(n, na);
    if combos <= n_perm as u128 {
        let mut idx: Vec<usize> = (0..na).collect();
        let (mut hits, mut count) = (0u64, 0u64);
        loop {
            let s: f64 = idx.iter().map(|&i| pooled[i]).sum();
            count += 1;
            if stat(s) >= threshold {
                hits += 1;
            }
            // Next combination in lexicographic order.
            let Some(pos) = (0..na).rev().find(|&p| idx[p] < n - na + p) else {
                break;
            };
            idx[pos] += 1;
            for q in pos + 1..na {
                idx[q] = idx[q - 1] + 1;
            }
        }
        return Ok(PermutationResult {
            p_value: hits as f64 / count as f64,
            observed_diff,
            exhaustive: true,
            permutations: count,
        });
    }

    let hits = (0..n_perm)
        .into_par_iter()
        .filter(|&p| {
            let mut rng = resample_rng(seed, p);
            let mut perm = pooled.clone();
            perm.shuffle(&mut rng);
            stat(perm[..na].iter().sum()) >= threshold
        })
        .count();
    Ok(PermutationResult {
        p_value: (hits + 1) as f64 / (n_perm + 1) as f64,
        observed_diff,
        exhaustive: false,
        permutations: n_perm as u64,
    })
}

const MAX_SAMPLE_SIZE: usize = 10_000_000;

/// Smallest `n ≥ 2` whose upper confidence bound on the mean error,
/// `mean + t(n−1) · sd / √n`, stays at or below `bound`.
pub fn sample_size_mae(pilot_mean: f64, pilot_sd: f64, bound: f64, level: f64) -> Result<usize, StatsError> {
    if !(bound > pilot_mean) {
        return Err(StatsError::Infeasible(format!(
            "bound {bound} not above pilot mean {pilot_mean}"
        )));
    }
    if !(pilot_sd >= 0.0) || !(0.0..1.0).contains(&level) {
        return Err(StatsError::InvalidInput("sd must be non-negative and level in (0, 1)".into()));
    }
    let q = 1.0 - (1.0 - level) / 2.0;
    for n in 2..=MAX_SAMPLE_SIZE {
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| StatsError::InvalidInput(e.to_string()))?
            .inverse_cdf(q);
        if pilot_mean + t * pilot_sd / (n as f64).sqrt() <= bound {
            return Ok(n);
        }
    }
    Err(StatsError::Infeasible(format!("no n up to {MAX_SAMPLE_SIZE}")))
}

/// Normal-approximation size for estimating a proportion `p` to within
/// `half_width` at `level`.
pub fn sample_size_proportion(p: f64, half_width: f64, level: f64) -> Result<usize, StatsError> {
    if !(0.0..=1.0).contains(&p) || !(half_width > 0.0) || !(0.0..1.0).contains(&level) {
        return Err(StatsError::InvalidInput(
            "p in [0, 1], positive half-width and level in (0, 1) required".into(),
        ));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok(((z * z * p * (1.0 - p) / (half_width * half_width)).ceil() as usize).max(1))
}
