//! Exact single-particle law of the Curie–Weiss system with quadratic
//! confinement, for any finite `N`.
//!
//! With `V = |x|²/2` and `W = λ|x − x'|²/2` the system is linear. Writing
//! `Z_i = Z̄ + D_i`, the empirical mean `Z̄` feels no interaction and sees
//! noise of variance `σ²/N`, while each deviation `D_i` feels stiffness
//! `1 + λ` and noise of variance `σ²(1 − 1/N)`. Both are Gaussian and, for
//! i.i.d. Gaussian initial data, independent, so the one-particle law is
//! `N(m(t), Σ̄(t) + Σ_D(t))`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};
use crate::metrics::w2_gaussian;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    pub lambda: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub n: usize,
    /// Mean of the i.i.d. initial law in `(x, y)`.
    pub mean0: [f64; 2],
    /// Covariance of the i.i.d. initial law, row-major.
    pub cov0: [[f64; 2]; 2],
}

/// Mean and covariance of a 2-d Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2 {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl Gaussian2 {
    /// Bures–Wasserstein distance to `other`.
    pub fn w2(&self, other: &Gaussian2) -> Result<f64> {
        let v = |m: &Vector2<f64>| DVector::from_column_slice(m.as_slice());
        let c = |m: &Matrix2<f64>| DMatrix::from_column_slice(2, 2, m.as_slice());
        w2_gaussian(
            &v(&self.mean),
            &c(&self.cov),
            &v(&other.mean),
            &c(&other.cov),
        )
    }
}

fn drift(stiffness: f64, gamma: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -stiffness, -gamma)
}

/// RK4 for `m' = A m`, `S' = A S + S Aᵀ + Q` from `t0` to `t1`.
fn propagate(
    a: &Matrix2<f64>,
    q: &Matrix2<f64>,
    m: &mut Vector2<f64>,
    s: &mut Matrix2<f64>,
    t0: f64,
    t1: f64,
    h: f64,
) {
    let span = t1 - t0;
    if span <= 0.0 {
        return;
    }
    let steps = (span / h).ceil() as usize;
    let h = span / steps as f64;
    let fm = |m: &Vector2<f64>| a * m;
    let fs = |s: &Matrix2<f64>| a * s + s * a.transpose() + q;
    for _ in 0..steps {
        let (k1, l1) = (fm(m), fs(s));
        let (k2, l2) = (fm(&(*m + k1 * (h / 2.0))), fs(&(*s + l1 * (h / 2.0))));
        let (k3, l3) = (fm(&(*m + k2 * (h / 2.0))), fs(&(*s + l2 * (h / 2.0))));
        let (k4, l4) = (fm(&(*m + k3 * h)), fs(&(*s + l3 * h)));
        *m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        *s += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
}

impl LinearGaussianModel {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(KclError::invalid("n", "must be positive"));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("sigma", self.sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(KclError::invalid(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Exact law of one particle at each of the (nondecreasing) `times`.
    pub fn marginals(&self, times: &[f64]) -> Result<Vec<Gaussian2>> {
        self.validate()?;
        if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
            return Err(KclError::invalid(
                "times",
                "must be nonnegative and nondecreasing",
            ));
        }
        let nf = self.n as f64;
        let s2 = self.sigma * self.sigma;
        let cov0 = Matrix2::new(
            self.cov0[0][0],
            self.cov0[0][1],
            self.cov0[1][0],
            self.cov0[1][1],
        );
        let a_mean = drift(1.0, self.gamma);
        let a_dev = drift(1.0 + self.lambda, self.gamma);
        let q_mean = Matrix2::new(0.0, 0.0, 0.0, s2 / nf);
        let q_dev = Matrix2::new(0.0, 0.0, 0.0, s2 * (1.0 - 1.0 / nf));
        let mut m = Vector2::new(self.mean0[0], self.mean0[1]);
        let mut s_mean = cov0 / nf;
        let mut m_dev = Vector2::zeros();
        let mut s_dev = cov0 * (1.0 - 1.0 / nf);
        let h = 1e-3;
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &ti in times {
            propagate(&a_mean, &q_mean, &mut m, &mut s_mean, t, ti, h);
            propagate(&a_dev, &q_dev, &mut m_dev, &mut s_dev, t, ti, h);
            t = ti.max(t);
            out.push(Gaussian2 {
                mean: m,
                cov: s_mean + s_dev,
            });
        }
        Ok(out)
    }
}

/// Sample mean and covariance of the phase-space points of a 1-d state.
pub fn empirical_gaussian(state: &super::ParticleState) -> Result<Gaussian2> {
    if state.dim != 1 || state.n < 2 {
        return Err(KclError::invalid(
            "state",
            "need d = 1 and at least two particles",
        ));
    }
    let n = state.n as f64;
    let mx = state.positions.iter().sum::<f64>() / n;
    let my = state.velocities.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in state.positions.iter().zip(&state.velocities) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let k = 1.0 / (n - 1.0);
    Ok(Gaussian2 {
        mean: Vector2::new(mx, my),
        cov: Matrix2::new(sxx * k, sxy * k, sxy * k, syy * k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_law_for_large_n() {
        // As N → ∞ the deviation dominates: stationary x-variance
        // σ²/(2γ(1+λ)) and y-variance σ²/(2γ).
        let m = LinearGaussianModel {
            lambda: 0.25,
            gamma: 1.0,
            sigma: 2f64.sqrt(),
            n: 1_000_000,
            mean0: [1.0, 0.0],
            cov0: [[0.5, 0.0], [0.0, 0.5]],
        };
        let g = m.marginals(&[0.0, 40.0]).unwrap();
        assert_eq!(g[0].cov, Matrix2::new(0.5, 0.0, 0.0, 0.5));
        assert!((g[1].cov[(0, 0)] - 0.8).abs() < 1e-5);
        assert!((g[1].cov[(1, 1)] - 1.0).abs() < 1e-5);
        assert!(g[1].mean.norm() < 1e-6);
    }

    #[test]
    fn single_particle_is_free_ou() {
        // N = 1: no interaction at all.
        let m = LinearGaussianModel {
            lambda: 5.0,
            gamma: 1.0,
            sigma: 2f64.sqrt(),
            n: 1,
            mean0: [0.0, 0.0],
            cov0: [[0.0, 0.0], [0.0, 0.0]],
        };
        let g = m.marginals(&[50.0]).unwrap();
        assert!((g[0].cov[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_decreasing_times() {
        let m = LinearGaussianModel {
            lambda: 0.0,
            gamma: 1.0,
            sigma: 1.0,
            n: 3,
            mean0: [0.0, 0.0],
            cov0: [[1.0, 0.0], [0.0, 1.0]],
        };
        assert!(m.marginals(&[1.0, 0.5]).is_err());
    }
}
