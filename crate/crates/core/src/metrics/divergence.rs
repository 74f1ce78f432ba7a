use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    /// `H(p | q) = ∫ p ln(p/q)`.
    pub kl: f64,
    /// `½ ∫ |p − q|`.
    pub tv: f64,
}

/// Relative entropy and total variation of two densities on a common grid of
/// equal cells. Both are renormalized to unit mass first.
pub fn divergence_proxies(p: &[f64], q: &[f64], cell: f64) -> Result<Divergences> {
    if p.len() != q.len() {
        return Err(KclError::invalid(
            "binning",
            format!("{} cells vs {} cells", p.len(), q.len()),
        ));
    }
    if p.is_empty() || !(cell > 0.0) {
        return Err(KclError::invalid(
            "binning",
            "need at least one cell of positive size",
        ));
    }
    if p.iter().chain(q).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(KclError::invalid(
            "density",
            "values must be finite and nonnegative",
        ));
    }
    let (mp, mq) = (p.iter().sum::<f64>() * cell, q.iter().sum::<f64>() * cell);
    if !(mp > 0.0 && mq > 0.0) {
        return Err(KclError::invalid("density", "zero total mass"));
    }
    let mut kl = 0.0;
    let mut tv = 0.0;
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (a / mp, b / mq);
        tv += (a - b).abs();
        if a > 0.0 {
            kl += if b > 0.0 {
                a * (a / b).ln()
            } else {
                f64::INFINITY
            };
        }
    }
    let (kl, tv) = ((kl * cell).max(0.0), 0.5 * tv * cell);
    debug_assert!(
        tv * tv <= 2.0 * kl + 1e-12,
        "Pinsker violated: tv = {tv}, kl = {kl}"
    );
    Ok(Divergences { kl, tv })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::rng::NoiseStream;

    fn gaussian_grid(mean: f64, h: f64) -> Vec<f64> {
        (0..2000)
            .map(|i| {
                let x = -10.0 + (i as f64 + 0.5) * h;
                (-(x - mean) * (x - mean) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .collect()
    }

    #[test]
    fn identical_densities() {
        let p = gaussian_grid(0.0, 0.01);
        let d = divergence_proxies(&p, &p, 0.01).unwrap();
        assert_eq!(d.kl, 0.0);
        assert_eq!(d.tv, 0.0);
    }

    #[test]
    fn shifted_gaussians() {
        let d =
            divergence_proxies(&gaussian_grid(0.0, 0.01), &gaussian_grid(0.5, 0.01), 0.01).unwrap();
        assert!((d.kl - 0.125).abs() < 1e-6, "{}", d.kl);
    }

    #[test]
    fn mismatched_bins() {
        assert!(divergence_proxies(&[1.0, 1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn pinsker_on_many_random_pairs() {
        let s = NoiseStream::new(17, &[]);
        for pair in 0..1000u64 {
            let len = 5 + (pair % 40) as usize;
            let p: Vec<f64> = (0..len)
                .map(|i| s.uniform(pair, i as u32, 0).powi(3))
                .collect();
            let q: Vec<f64> = (0..len)
                .map(|i| s.uniform(pair, i as u32, 1) + 1e-3)
                .collect();
            let d = divergence_proxies(&p, &q, 0.1).unwrap();
            assert!(d.tv * d.tv <= 2.0 * d.kl + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pinsker_holds(p in proptest::collection::vec(0.0f64..1.0, 8), q in proptest::collection::vec(0.01f64..1.0, 8)) {
            prop_assume!(p.iter().sum::<f64>() > 0.0);
            let d = divergence_proxies(&p, &q, 0.5).unwrap();
            prop_assert!(d.tv * d.tv <= 2.0 * d.kl + 1e-12);
        }
    }
}
