//! Ancestor selection from log-weights, the effective sample size, and the
//! flat `(particle, putative)` index layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::math::logsumexp;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    Multinomial,
    #[default]
    Systematic,
}

/// Draws `n_out` ancestor indices with probabilities proportional to
/// `exp(weights_log)`.
///
/// A population of one is returned without touching `rng`, so that a single
/// candidate never perturbs the random stream.
pub fn resample<R: Rng + ?Sized>(
    weights_log: &[f64],
    n_out: usize,
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights_log.is_empty() {
        return Err(SmcError::InvalidConfig("cannot resample an empty population".into()));
    }
    let lse = logsumexp(weights_log);
    if lse == f64::NEG_INFINITY {
        return Err(SmcError::Degenerate { population: weights_log.len() });
    }
    if !lse.is_finite() {
        return Err(SmcError::InvalidConfig("non-finite log-weights".into()));
    }
    if weights_log.len() == 1 {
        return Ok(vec![0; n_out]);
    }
    let mut cumulative = Vec::with_capacity(weights_log.len());
    let mut acc = 0.0;
    for &w in weights_log {
        acc += (w - lse).exp();
        cumulative.push(acc);
    }
    let last = cumulative.len() - 1;
    // Largest index carrying mass; guards against round-off in the tail.
    let last_live = weights_log.iter().rposition(|&w| w > f64::NEG_INFINITY).unwrap_or(last);
    let total = cumulative[last];

    let pick = |u: f64| -> usize {
        let target = u * total;
        cumulative.partition_point(|&c| c <= target).min(last_live)
    };

    let out = match scheme {
        ResamplingScheme::Multinomial => (0..n_out).map(|_| pick(rng.random::<f64>())).collect(),
        ResamplingScheme::Systematic => {
            let u0: f64 = rng.random();
            let mut out = Vec::with_capacity(n_out);
            let mut j = 0usize;
            for i in 0..n_out {
                let target = (i as f64 + u0) / n_out as f64 * total;
                while j < last_live && cumulative[j] <= target {
                    j += 1;
                }
                out.push(j);
            }
            out
        }
    };
    Ok(out)
}

/// `(sum w)^2 / sum w^2`, computed from log-weights.
pub fn effective_sample_size(weights_log: &[f64]) -> Result<f64> {
    let lse = logsumexp(weights_log);
    if !lse.is_finite() {
        return Err(SmcError::Degenerate { population: weights_log.len() });
    }
    let doubled: Vec<f64> = weights_log.iter().map(|&w| 2.0 * (w - lse)).collect();
    Ok((-logsumexp(&doubled)).exp())
}

/// `flat(i, j) = i * k + j`.
#[inline]
pub fn flat_index_encode(particle: usize, putative: usize, k: usize) -> usize {
    debug_assert!(putative < k);
    particle * k + putative
}

/// Inverse of [`flat_index_encode`]. Panics when `alpha >= n * k`.
#[inline]
pub fn flat_index_decode(alpha: usize, k: usize, n: usize) -> (usize, usize) {
    assert!(k > 0 && alpha < n * k, "flat index {alpha} out of range for N={n}, K={k}");
    (alpha / k, alpha % k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_neg_inf_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = resample(&[f64::NEG_INFINITY; 4], 4, ResamplingScheme::Systematic, &mut rng);
        assert_eq!(err, Err(SmcError::Degenerate { population: 4 }));
    }

    #[test]
    fn uniform_weights_select_each_index_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        let draws = 40_000;
        for _ in 0..draws / 4 {
            for i in resample(&[-3.0; 4], 4, ResamplingScheme::Multinomial, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 / 4.0).abs() < 4.0 * sigma);
        }
        // Systematic with equal weights picks every index exactly once.
        let mut idx = resample(&[7.0; 4], 4, ResamplingScheme::Systematic, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn multinomial_frequency_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = [0.7f64.ln(), 0.3f64.ln()];
        let n = 10_000;
        let idx = resample(&w, n, ResamplingScheme::Multinomial, &mut rng).unwrap();
        let freq = idx.iter().filter(|&&i| i == 0).count() as f64 / n as f64;
        let sigma = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((freq - 0.7).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn systematic_offspring_counts_are_floor_or_ceil() {
        let w = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = resample(&w, 4, ResamplingScheme::Systematic, &mut rng).unwrap();
            let mut counts = [0i64; 3];
            for i in idx {
                counts[i] += 1;
            }
            for (c, e) in counts.iter().zip([2, 1, 1]) {
                assert!((c - e).abs() <= 1);
            }
        }
    }

    #[test]
    fn zero_mass_entries_are_never_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Systematic] {
            assert!(resample(&w, 50, scheme, &mut rng).unwrap().iter().all(|&i| i == 1));
        }
    }

    #[test]
    fn ess_examples() {
        assert!((effective_sample_size(&[0.0; 8]).unwrap() - 8.0).abs() < 1e-12);
        let one_hot = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((effective_sample_size(&one_hot).unwrap() - 1.0).abs() < 1e-12);
        let w = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        assert!((effective_sample_size(&w).unwrap() - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn flat_index_examples_and_round_trip() {
        assert_eq!(flat_index_decode(0, 128, 2), (0, 0));
        assert_eq!(flat_index_decode(129, 128, 2), (1, 1));
        for n in 1..=64 {
            for k in 1..=64 {
                for i in 0..n {
                    for j in 0..k {
                        assert_eq!(flat_index_decode(flat_index_encode(i, j, k), k, n), (i, j));
                    }
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn flat_index_out_of_range_panics() {
        flat_index_decode(8, 4, 2);
    }
}
