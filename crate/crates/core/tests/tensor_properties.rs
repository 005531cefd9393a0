use proptest::prelude::*;

use qbnn::{SeededRng, Tensor};

proptest! {
    #[test]
    fn softmax_matches_f64_oracle(row in prop::collection::vec(-80.0f32..80.0, 1..20)) {
        let t = Tensor::new(vec![1, row.len()], row.clone()).unwrap();
        let s = t.softmax_rows();
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
        let z: f64 = row.iter().map(|&v| (f64::from(v) - m).exp()).sum();
        for (&p, &v) in s.data().iter().zip(&row) {
            prop_assert!((f64::from(p) - (f64::from(v) - m).exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn finite_inputs_stay_finite(seed in any::<u64>(), r in 1usize..8, k in 1usize..8, c in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let a: Tensor<f32> = rng.gaussian(&[r, k]).scale(1e3);
        let b: Tensor<f32> = rng.gaussian(&[k, c]).scale(1e3);
        let p = a.matmul(&b).unwrap();
        prop_assert!(p.all_finite());
        prop_assert!(p.relu().all_finite());
        prop_assert!(p.softmax_rows().all_finite());
    }

    #[test]
    fn relu_is_idempotent_and_nonnegative(xs in prop::collection::vec(-5.0f64..5.0, 1..50)) {
        let t = Tensor::new(vec![xs.len()], xs).unwrap();
        let r = t.relu();
        prop_assert!(r.data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(r.relu(), r);
    }

    #[test]
    fn seeded_masks_repeat(seed in any::<u64>(), p in 0.0f64..0.95) {
        let a: Tensor<f32> = SeededRng::new(seed).bernoulli_mask(&[7, 5], p).unwrap();
        let b: Tensor<f32> = SeededRng::new(seed).bernoulli_mask(&[7, 5], p).unwrap();
        prop_assert_eq!(a, b);
    }
}
