use critic_smc::smc::{effective_sample_size, flat_index_decode, flat_index_encode, resample, ResamplingScheme};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn probs(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn log_weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![4 => -30.0..30.0f64, 1 => Just(f64::NEG_INFINITY)], 1..40)
        .prop_filter("needs one live weight", |w| w.iter().any(|x| x.is_finite()))
}

proptest! {
    #[test]
    fn indices_are_in_range_and_avoid_dead_particles(
        w in log_weights(), n_out in 1usize..64, seed: u64, systematic: bool
    ) {
        let scheme = if systematic { ResamplingScheme::Systematic } else { ResamplingScheme::Multinomial };
        let idx = resample(&w, n_out, scheme, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(idx.len(), n_out);
        for &i in &idx {
            prop_assert!(i < w.len());
            prop_assert!(w[i].is_finite());
        }
    }

    #[test]
    fn systematic_counts_stay_within_one_of_expectation(
        w in log_weights(), n_out in 1usize..200, seed: u64
    ) {
        let p = probs(&w);
        let idx = resample(&w, n_out, ResamplingScheme::Systematic, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut counts = vec![0usize; w.len()];
        for i in idx {
            counts[i] += 1;
        }
        for (c, p) in counts.iter().zip(&p) {
            let expected = p * n_out as f64;
            prop_assert!((*c as f64 - expected).abs() < 1.0 + 1e-9, "count {} vs {}", c, expected);
        }
    }

    #[test]
    fn ess_lies_between_one_and_population(w in log_weights()) {
        let ess = effective_sample_size(&w).unwrap();
        let live = w.iter().filter(|x| x.is_finite()).count() as f64;
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= live + 1e-9);
        let p = probs(&w);
        let oracle = 1.0 / p.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((ess - oracle).abs() <= 1e-9 * oracle);
    }

    #[test]
    fn shifting_all_weights_changes_nothing(w in log_weights(), shift in -500.0..500.0f64, seed: u64) {
        let shifted: Vec<f64> = w.iter().map(|x| x + shift).collect();
        let a = resample(&w, 32, ResamplingScheme::Multinomial, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = resample(&shifted, 32, ResamplingScheme::Multinomial, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // Shifting can move a cumulative sum by an ulp; compare mass instead of indices.
        let p = probs(&w);
        let mass = |v: &[usize]| v.iter().map(|&i| p[i]).sum::<f64>();
        prop_assert!((mass(&a) - mass(&b)).abs() < 1e-6 || a == b);
    }

    #[test]
    fn flat_index_round_trips(n in 1usize..100, k in 1usize..2000, i in 0usize..100, j in 0usize..2000) {
        let (i, j) = (i % n, j % k);
        let alpha = flat_index_encode(i, j, k);
        prop_assert!(alpha < n * k);
        prop_assert_eq!(flat_index_decode(alpha, k, n), (i, j));
    }
}

#[test]
fn multinomial_frequencies_match_weights() {
    let w = [0.0, 1.0, -2.0, 0.5, f64::NEG_INFINITY, -0.3];
    let p = probs(&w);
    let draws = 200_000;
    let idx = resample(&w, draws, ResamplingScheme::Multinomial, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut counts = [0usize; 6];
    for i in idx {
        counts[i] += 1;
    }
    for (c, p) in counts.iter().zip(&p) {
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((*c as f64 / draws as f64 - p).abs() <= 4.0 * sigma + 1e-12);
    }
}

#[test]
fn single_candidate_consumes_no_randomness() {
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let b = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(resample(&[-3.0], 5, ResamplingScheme::Systematic, &mut a).unwrap(), vec![0; 5]);
    assert_eq!(a, b);
}

#[test]
fn all_dead_population_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(resample(&[f64::NEG_INFINITY; 3], 3, ResamplingScheme::Multinomial, &mut rng).is_err());
    assert!(resample(&[], 3, ResamplingScheme::Multinomial, &mut rng).is_err());
}

#[test]
#[should_panic]
fn decoding_out_of_range_panics() {
    flat_index_decode(12, 4, 3);
}
