use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    /// Mean of `a - b`.
    pub statistic: f64,
    pub n_pairs: usize,
    pub resamples: usize,
    pub seed: u64,
}

/// Two-sided paired sign-flip permutation test on per-utterance rates.
///
/// Each resample flips the sign of every paired difference independently
/// with probability 1/2. The p-value is `(r + 1) / (B + 1)` where `r` counts
/// resamples whose absolute mean reaches the observed one.
pub fn paired_permutation_test(
    errors_a: &[f64],
    errors_b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::Pairing(format!(
            "length mismatch: {} vs {}",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let n = errors_a.len();
    if n < 2 {
        return Err(Error::Pairing(format!("need at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Pairing("non-finite rate".into()));
    }
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let cutoff = observed.abs() - 1e-12 * scale.max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let mut sum = 0.0;
        for d in &diffs {
            if rng.gen::<bool>() {
                sum += d;
            } else {
                sum -= d;
            }
        }
        if (sum / n as f64).abs() >= cutoff {
            hits += 1;
        }
    }
    Ok(SignificanceResult {
        p_value: (hits + 1) as f64 / (resamples + 1) as f64,
        statistic: observed,
        n_pairs: n,
        resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_one() {
        let a = [0.1, 0.2, 0.3, 0.0];
        let r = paired_permutation_test(&a, &a, 500, 0).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn constant_shift_is_significant() {
        let b: Vec<f64> = (0..20).map(|i| i as f64 / 40.0).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        let r = paired_permutation_test(&a, &b, 10_000, 0).unwrap();
        assert!(r.p_value <= 0.001, "p = {}", r.p_value);
        assert!((r.statistic - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_pairs_are_coarse() {
        // Sign patterns: ++, +-, -+, --; the extreme two always reach |obs|.
        for seed in 0..20 {
            let r = paired_permutation_test(&[0.9, 0.8], &[0.1, 0.0], 1000, seed).unwrap();
            assert!(r.p_value >= 0.25, "p = {}", r.p_value);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = [0.3, 0.1, 0.4, 0.1, 0.5];
        let b = [0.2, 0.2, 0.3, 0.1, 0.2];
        let x = paired_permutation_test(&a, &b, 999, 7).unwrap();
        let y = paired_permutation_test(&a, &b, 999, 7).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn pairing_errors() {
        assert!(matches!(paired_permutation_test(&[0.1, 0.2], &[0.1], 10, 0), Err(Error::Pairing(_))));
        assert!(matches!(paired_permutation_test(&[0.1], &[0.1], 10, 0), Err(Error::Pairing(_))));
    }
}
