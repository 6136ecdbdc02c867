//! Property suites for the numeric primitives, the noise constructors, and
//! the corruption statistics.

use labelnoise_core::matrix::Matrix;
use labelnoise_core::noise::{
    build_custom_noise, build_random_noise, build_uniform_noise, column_normalize, pearson,
    sample_noisy_labels,
};
use labelnoise_core::ops::{dropout_forward, softmax};
use labelnoise_core::rng::{stream, stream_indexed, Stream};
use labelnoise_core::text::{encode, Vocab};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_sums_to_one_and_shift_invariant(
        v in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
    ) {
        let s = softmax(&v).unwrap();
        let total: f64 = s.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);

        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let s2 = softmax(&shifted).unwrap();
        for (a, b) in s.iter().zip(s2.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_constructor_columns_stochastic(k in 2usize..10, p in 0.0f64..=1.0) {
        let t = build_uniform_noise(k, p).unwrap();
        for j in 0..k {
            let mut sum = 0.0;
            for i in 0..k {
                let v = t.phi().get(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn random_constructor_columns_stochastic(k in 2usize..10, p in 0.0f64..=1.0, seed in 0u64..1000) {
        let mut rng = stream(seed, Stream::Corruption);
        let t = build_random_noise(k, p, &mut rng).unwrap();
        for j in 0..k {
            let mut sum = 0.0;
            for i in 0..k {
                let v = t.phi().get(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert_eq!(t.phi().get(j, j), 1.0 - p);
        }
    }

    #[test]
    fn custom_constructor_normalizes_any_nonnegative_input(
        k in 2usize..6,
        seed in 0u64..1000,
    ) {
        let mut rng = stream(seed, Stream::Corruption);
        use rand::Rng as _;
        let entries = Matrix::from_fn(k, k, |_, _| rng.gen_range(0.05f64..5.0));
        let (t, _) = build_custom_noise(&entries).unwrap();
        for j in 0..k {
            let sum: f64 = (0..k).map(|i| t.phi().get(i, j)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalized_transition_correlates_perfectly(seed in 0u64..500, k in 2usize..8) {
        let mut rng = stream(seed, Stream::Corruption);
        let t = build_random_noise(k, 0.45, &mut rng).unwrap();
        // Degenerate all-equal matrices have no variance to correlate.
        let normalized = column_normalize(t.phi()).unwrap();
        if pearson(t.phi(), t.phi()).is_ok() {
            let r = pearson(&normalized, t.phi()).unwrap();
            prop_assert!((r - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn dropout_eval_is_bit_identical(v in prop::collection::vec(-100.0f64..100.0, 1..64)) {
        let mut rng = stream(0, Stream::Dropout);
        let (out, mask) = dropout_forward(&v, 0.5, false, &mut rng).unwrap();
        prop_assert!(mask.is_none());
        for (a, b) in v.iter().zip(out.iter()) {
            prop_assert!(a.to_bits() == b.to_bits());
        }
    }

    #[test]
    fn dropout_train_survivors_scaled_exactly(
        v in prop::collection::vec(-10.0f64..10.0, 1..64),
        keep in 0.1f64..1.0,
        seed in 0u64..100,
    ) {
        let mut rng = stream(seed, Stream::Dropout);
        let (out, mask) = dropout_forward(&v, keep, true, &mut rng).unwrap();
        let mask = mask.unwrap();
        for ((x, y), m) in v.iter().zip(out.iter()).zip(mask.iter()) {
            if *m == 0.0 {
                prop_assert_eq!(*y, 0.0);
            } else {
                prop_assert!((y - x / keep).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn encoding_is_deterministic_and_idempotent(words in prop::collection::vec("[a-z]{1,6}", 0..12)) {
        let text = words.join(" ");
        let vocab = Vocab::build(["alpha beta gamma delta"], 1).unwrap();
        let a = encode(&text, &vocab, 10).unwrap();
        let b = encode(&text, &vocab, 10).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), 10);
    }
}

#[test]
fn uniform_flip_rate_within_three_standard_errors() {
    // Uniform model: P(flip) = p(1−1/K).
    let n = 50_000usize;
    let (k, p) = (4usize, 0.4f64);
    let expected = p * (1.0 - 1.0 / k as f64);
    let se = (expected * (1.0 - expected) / n as f64).sqrt();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let phi = build_uniform_noise(k, p).unwrap();
    for rep in 0..3u64 {
        let mut rng = stream_indexed(100 + rep, Stream::Corruption, rep);
        let noisy = sample_noisy_labels(&labels, &phi, &mut rng).unwrap();
        let flips = labels.iter().zip(noisy.iter()).filter(|(a, b)| a != b).count();
        let frac = flips as f64 / n as f64;
        assert!(
            (frac - expected).abs() <= 3.0 * se,
            "rep {}: flip rate {} vs {} (se {})",
            rep,
            frac,
            expected,
            se
        );
    }
}

#[test]
fn random_flip_rate_within_three_standard_errors() {
    // Random model: P(flip) = p exactly, independent of the drawn simplex.
    let n = 50_000usize;
    let (k, p) = (4usize, 0.4f64);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    for rep in 0..3u64 {
        let mut rng = stream_indexed(200 + rep, Stream::Corruption, rep);
        let phi = build_random_noise(k, p, &mut rng).unwrap();
        let noisy = sample_noisy_labels(&labels, &phi, &mut rng).unwrap();
        let flips = labels.iter().zip(noisy.iter()).filter(|(a, b)| a != b).count();
        let frac = flips as f64 / n as f64;
        assert!(
            (frac - p).abs() <= 3.0 * se,
            "rep {}: flip rate {} vs {} (se {})",
            rep,
            frac,
            p,
            se
        );
    }
}
