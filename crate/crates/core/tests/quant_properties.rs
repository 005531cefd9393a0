use proptest::prelude::*;

use qbnn::quant::{
    dequantise, fake_quant, fake_quant_bias, noise_params, quantise, FixedPointMultiplier, QuantParams, QuantisedLinear,
    RangeObserver, RequantMode,
};
use qbnn::{SeededRng, Tensor};

fn range() -> impl Strategy<Value = (f64, f64)> {
    (-50.0f64..50.0, 0.0f64..100.0).prop_map(|(a, w)| (a, a + w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn roundtrip_within_half_step(
        (a, b) in range(),
        bits in 2u32..=8,
        signed in any::<bool>(),
        fracs in prop::collection::vec(0.0f64..=1.0, 1..64),
    ) {
        let p = QuantParams::from_range(a, b, bits, signed).unwrap();
        let t = Tensor::new(vec![fracs.len()], fracs.iter().map(|u| a + u * (b - a)).collect()).unwrap();
        let back = dequantise(&quantise(&t, &p));
        for (x, y) in t.data().iter().zip(back.data()) {
            prop_assert!((x - y).abs() <= p.scale / 2.0 + 1e-9 * p.scale.max(1.0), "{x} -> {y}, S={}", p.scale);
        }
    }

    #[test]
    fn zero_is_exact((a, b) in range(), bits in 2u32..=8, signed in any::<bool>()) {
        let p = QuantParams::from_range(a, b, bits, signed).unwrap();
        let q = p.quantise_value(0.0);
        prop_assert_eq!(q, p.zero_point);
        prop_assert_eq!(p.dequantise_value(q), 0.0);
        prop_assert!(p.zero_point >= p.qmin() && p.zero_point <= p.qmax());
    }

    #[test]
    fn fake_quant_is_idempotent((a, b) in range(), bits in 2u32..=8, xs in prop::collection::vec(-200.0f64..200.0, 1..32)) {
        let p = QuantParams::from_range(a, b, bits, false).unwrap();
        let t = Tensor::new(vec![xs.len()], xs).unwrap();
        let once = fake_quant(&t, &p);
        prop_assert_eq!(fake_quant(&once, &p), once);
    }

    #[test]
    fn observer_contains_zero_and_orders_bounds(
        batches in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 1..16), 1..10),
    ) {
        let mut obs = RangeObserver::new(0.1).unwrap();
        for b in &batches {
            obs.observe(&Tensor::new(vec![b.len()], b.clone()).unwrap()).unwrap();
            let (lo, hi) = obs.range().unwrap();
            prop_assert!(lo <= hi);
        }
        let p = obs.derive_params(8, false).unwrap();
        let (lo, hi) = p.real_range();
        prop_assert!(lo <= 0.0 && hi >= 0.0);
    }

    #[test]
    fn fixed_point_reconstruction(x in 1e-6f64..4.0) {
        let m = FixedPointMultiplier::from_real(x).unwrap();
        prop_assert!((m.to_real() - x).abs() <= x * 2f64.powi(-24));
    }

    #[test]
    fn fixed_point_apply_matches_real_rounding(x in 1e-3f64..1.0, v in -1_000_000i64..1_000_000) {
        let m = FixedPointMultiplier::from_real(x).unwrap();
        let exact = v as f64 * x;
        // Away from ties the integer path must round like the real product.
        if (exact.abs().fract() - 0.5).abs() > 1e-3 {
            prop_assert_eq!(m.apply(v), exact.round() as i64);
        }
    }

    #[test]
    fn integer_layer_tracks_float_path(
        seed in any::<u64>(),
        rows in 1usize..6,
        inner in 1usize..33,
        cols in 1usize..33,
        bits_w in 3u32..=8,
        bits_a in 3u32..=7,
        relu in any::<bool>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let x: Tensor<f64> = rng.uniform_tensor(&[rows, inner], -0.5, 2.0);
        let w: Tensor<f64> = rng.gaussian(&[inner, cols]).scale(0.3);
        let b: Tensor<f64> = rng.gaussian(&[cols]).scale(0.2);
        let pi = QuantParams::from_range(x.min(), x.max(), bits_a, false).unwrap();
        let pw = QuantParams::from_range(w.min(), w.max(), bits_w, true).unwrap();
        let mut y = fake_quant(&x, &pi)
            .matmul(&fake_quant(&w, &pw))
            .unwrap()
            .add_row(&fake_quant_bias(&b, &pi, &pw))
            .unwrap();
        if relu {
            y = y.relu();
        }
        let po = QuantParams::from_range(y.min(), y.max(), bits_a, false).unwrap();
        let float_path = fake_quant(&y, &po);
        let layer = QuantisedLinear::new(quantise(&w, &pw), Some(&b), pi, po, relu).unwrap();
        let qi = quantise(&x, &pi);
        let fixed = dequantise(&layer.forward(&qi, RequantMode::FixedPoint).unwrap());
        for (a, r) in fixed.data().iter().zip(float_path.data()) {
            prop_assert!((a - r).abs() <= po.scale * (1.0 + 1e-9), "{a} vs {r}");
        }
    }
}

#[test]
fn noise_grid_covers_three_sigma() {
    let p = noise_params::<f64>();
    assert_eq!(p.zero_point, 0);
    assert_eq!(p.scale, 0.0236);
    let (lo, hi) = p.real_range();
    assert!((lo + 3.0208).abs() < 1e-9 && (hi - 2.9972).abs() < 1e-9);
    assert!(lo < -3.0 && hi > 2.99);
}

#[test]
fn quantised_noise_keeps_unit_variance() {
    let p = noise_params::<f64>();
    let mut rng = SeededRng::new(2024);
    let eps: Tensor<f64> = rng.gaussian(&[100_000]);
    let q = fake_quant(&eps, &p);
    let n = q.len() as f64;
    let mean = q.sum() / n;
    let var = q.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((0.97..=1.03).contains(&var), "variance {var}");
}
