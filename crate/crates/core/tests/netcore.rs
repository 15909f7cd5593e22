use mvdet::netcore::{dot, seeded_init, sigmoid, softmax, DenseMatrix, MlpWeights, RngSeed};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_is_shift_invariant(v in prop::collection::vec(-30.0..30.0f64, 1..20), c in -100.0..100.0f64) {
        let a = softmax(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_logits(v in prop::collection::vec(-1e300..1e300f64, 1..10)) {
        let p = softmax(&v);
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dot_matches_naive_sum(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 0..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        prop_assert!((dot(&a, &b) - naive).abs() < 1e-10);
    }

    #[test]
    fn sigmoid_is_symmetric(x in -40.0..40.0f64) {
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn seeded_init_is_reproducible() {
    let a: DenseMatrix<f64> = seeded_init(RngSeed(9), 7, 5);
    assert_eq!(a, seeded_init(RngSeed(9), 7, 5));
    assert_ne!(a, seeded_init(RngSeed(10), 7, 5));
    assert!(a.is_finite());
}

#[test]
fn mlp_matches_loop_oracle() {
    let w = MlpWeights::<f64>::seeded(RngSeed(3), 6, 6, 4);
    let x = [0.3, -1.2, 0.8, 0.0, 2.0, -0.5];
    let layer = |m: &DenseMatrix<f64>, b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..m.rows()).map(|r| (0..m.cols()).fold(b[r], |acc, c| acc + m.get(r, c) * x[c])).collect()
    };
    let h: Vec<f64> = layer(&w.first.weight, &w.first.bias, &x).into_iter().map(|v| v.max(0.0)).collect();
    let want = layer(&w.second.weight, &w.second.bias, &h);
    let got = w.forward(&x).unwrap();
    for (g, e) in got.iter().zip(&want) {
        assert!((g - e).abs() < 1e-12);
    }
}
