use kcl_core::metrics::{a_n, w1_samples_vs_density, w2_1d, w2_empirical, W2Method};
use proptest::prelude::*;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn exact_w2_agrees_with_sorting_in_one_dimension(
        a in proptest::collection::vec(-5.0f64..5.0, 1..40),
        seed in proptest::collection::vec(-5.0f64..5.0, 40),
    ) {
        let b = &seed[..a.len()];
        let (sa, sb) = (sorted(&a), sorted(b));
        let oracle = (sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt();
        let exact = w2_empirical(&a, b, 1, W2Method::Exact).unwrap();
        prop_assert!((exact - oracle).abs() < 1e-9);
        prop_assert!((w2_1d(&a, b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn translation_moves_w2_by_the_shift(
        a in proptest::collection::vec(-3.0f64..3.0, 2..30),
        c in -2.0f64..2.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v + c).collect();
        let w = w2_empirical(&a, &b, 2, W2Method::Exact);
        if a.len() % 2 == 0 {
            // 2-d points shifted by (c, c).
            prop_assert!((w.unwrap() - c.abs() * 2f64.sqrt()).abs() < 1e-9);
        }
        prop_assert!((w2_1d(&a, &b).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn sliced_never_exceeds_exact(pts in proptest::collection::vec(-3.0f64..3.0, 40)) {
        let (a, b) = pts.split_at(20);
        let exact = w2_empirical(a, b, 2, W2Method::Exact).unwrap();
        let sliced = w2_empirical(a, b, 2, W2Method::Sliced).unwrap();
        prop_assert!(sliced <= exact + 1e-12);
    }
}

#[test]
fn w1_against_numerical_cdf_difference() {
    // Uniform density on [0, 2] against two atoms, compared with midpoint
    // quadrature of the CDF gap.
    let samples = [0.5, 1.5];
    let (x_min, dx, m) = (0.0, 0.01, 200);
    let density = vec![0.5; m];
    let w1 = w1_samples_vs_density(&samples, x_min, dx, &density).unwrap();
    let k = 200_000;
    let h = 2.0 / k as f64;
    let quad: f64 = (0..k)
        .map(|i| {
            let u = (i as f64 + 0.5) * h;
            let f = samples.iter().filter(|s| **s <= u).count() as f64 / 2.0;
            (f - u / 2.0).abs() * h
        })
        .sum();
    assert!((w1 - quad).abs() < 1e-6, "{w1} {quad}");
}

#[test]
fn a_n_is_the_empirical_rate_table() {
    for n in [4usize, 100, 10_000] {
        let nf = n as f64;
        assert!((a_n(n, 1).unwrap() - nf.powf(-0.5)).abs() < 1e-15);
        assert!((a_n(n, 2).unwrap() - (1.0 + nf).ln() / nf.sqrt()).abs() < 1e-15);
        assert!((a_n(n, 3).unwrap() - nf.powf(-2.0 / 3.0)).abs() < 1e-15);
    }
}
