//! Numerically stable log-space helpers, seed derivation and the small
//! statistics used by the experiment harness.

use rand::Rng;

/// `log(sum(exp(xs)))` with a max shift. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log((1/n) sum(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    logsumexp(xs) - (xs.len() as f64).ln()
}

/// `log(sum(exp(xs + ws)))` for paired values and log-weights.
pub fn weighted_logsumexp(xs: &[f64], log_w: &[f64]) -> f64 {
    assert_eq!(xs.len(), log_w.len());
    let shifted: Vec<f64> = xs.iter().zip(log_w).map(|(x, w)| x + w).collect();
    logsumexp(&shifted)
}

/// Normalizes log-weights into probabilities through a max shift.
pub fn normalized_probs(log_w: &[f64]) -> Option<Vec<f64>> {
    let lse = logsumexp(log_w);
    if !lse.is_finite() {
        return None;
    }
    Some(log_w.iter().map(|&w| (w - lse).exp()).collect())
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of indices, so that
/// e.g. every variant sees the same episode seed for a given episode index.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Paired bootstrap over episodes: fraction of resamples in which the mean of
/// `a` is strictly greater than the mean of `b`. `a` and `b` are per-episode
/// statistics over the same episodes.
pub fn bootstrap_prob_greater<R: Rng + ?Sized>(a: &[f64], b: &[f64], resamples: usize, rng: &mut R) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut wins = 0usize;
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += diffs[rng.random_range(0..n)];
        }
        if s > 0.0 {
            wins += 1;
        }
    }
    wins as f64 / resamples as f64
}

/// Paired bootstrap upper quantile of `mean(a) - mean(b)`.
pub fn bootstrap_diff_quantile<R: Rng + ?Sized>(a: &[f64], b: &[f64], q: f64, resamples: usize, rng: &mut R) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(|x, y| x.total_cmp(y));
    let idx = ((q * resamples as f64).floor() as usize).min(resamples - 1);
    means[idx]
}

/// One-sided paired sign-flip permutation test for `mean(a - b) < 0`.
/// Returns the p-value.
pub fn paired_permutation_p_less<R: Rng + ?Sized>(a: &[f64], b: &[f64], permutations: usize, rng: &mut R) -> f64 {
    assert_eq!(a.len(), b.len());
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed: f64 = diffs.iter().sum();
    let mut as_extreme = 0usize;
    for _ in 0..permutations {
        let s: f64 = diffs.iter().map(|&d| if rng.random::<bool>() { d } else { -d }).sum();
        if s <= observed {
            as_extreme += 1;
        }
    }
    (as_extreme + 1) as f64 / (permutations + 1) as f64
}

/// Two-sided paired sign-flip permutation test for `mean(a - b) != 0`.
pub fn paired_permutation_p_two_sided<R: Rng + ?Sized>(a: &[f64], b: &[f64], permutations: usize, rng: &mut R) -> f64 {
    assert_eq!(a.len(), b.len());
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed: f64 = diffs.iter().sum::<f64>().abs();
    let mut as_extreme = 0usize;
    for _ in 0..permutations {
        let s: f64 = diffs.iter().map(|&d| if rng.random::<bool>() { d } else { -d }).sum();
        if s.abs() >= observed - 1e-12 * observed.max(1.0) {
            as_extreme += 1;
        }
    }
    (as_extreme + 1) as f64 / (permutations + 1) as f64
}
