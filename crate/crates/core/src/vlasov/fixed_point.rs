use serde::{Deserialize, Serialize};

use super::energy::{convolve, interaction_matrix};
use super::{GridDensity, GridSpec};
use crate::error::{KclError, Result};
use crate::potential::PotentialSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    /// `θ` in `ρ ← (1−θ)ρ + θ T(ρ)`.
    pub damping: f64,
    /// Stop when `sup |T(ρ) − ρ| < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest mass allowed in the outer two cell layers.
    pub boundary_mass_tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            damping: 0.5,
            tol: 1e-12,
            max_iter: 10_000,
            boundary_mass_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    /// `ρ(x) ⊗ N(0, 1/β)` on the grid.
    pub density: GridDensity,
    /// `ρ` at the `x` cell centres.
    pub x_density: Vec<f64>,
    pub residual_history: Vec<f64>,
}

impl FixedPoint {
    pub fn iterations(&self) -> usize {
        self.residual_history.len()
    }
}

/// Discrete Maxwellian `∝ exp(−β y²/2)` normalized on the `y` cells.
pub fn maxwellian(grid: &GridSpec, beta: f64) -> Vec<f64> {
    let mut m: Vec<f64> = (0..grid.n_y)
        .map(|j| (-0.5 * beta * grid.y(j).powi(2)).exp())
        .collect();
    let s = m.iter().sum::<f64>() * grid.dy();
    m.iter_mut().for_each(|v| *v /= s);
    m
}

fn gibbs_map(v: &[f64], phi: &[f64], beta: f64, dx: f64) -> Vec<f64> {
    let e: Vec<f64> = v.iter().zip(phi).map(|(a, b)| -beta * (a + b)).collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut r: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
    let s = r.iter().sum::<f64>() * dx;
    r.iter_mut().for_each(|v| *v /= s);
    r
}

/// Damped iteration `ρ_{k+1} ∝ exp(−β(V + W∗ρ_k))` on the `x` cells,
/// started from `ρ_0 ∝ exp(−βV)`.
pub fn stationary_fixed_point(
    spec: &PotentialSpec,
    beta: f64,
    grid: &GridSpec,
    cfg: &FixedPointConfig,
) -> Result<FixedPoint> {
    if spec.dim != 1 {
        return Err(KclError::invalid("dim", "grid objects are one-dimensional"));
    }
    grid.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(KclError::invalid("beta", "must be positive and finite"));
    }
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(KclError::invalid("damping", "must lie in (0, 1]"));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(KclError::invalid(
            "fixed_point",
            "need tol > 0 and max_iter > 0",
        ));
    }
    let xs = grid.x_nodes();
    let dx = grid.dx();
    let v: Vec<f64> = xs.iter().map(|x| spec.confinement.value(&[*x])).collect();
    let k = interaction_matrix(spec, &xs, dx);
    let mut rho = gibbs_map(&v, &vec![0.0; xs.len()], beta, dx);
    let mut history = Vec::new();
    loop {
        let next = gibbs_map(&v, &convolve(&k, &rho), beta, dx);
        let res = next
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !res.is_finite() {
            return Err(KclError::NonFinite {
                what: "fixed-point residual".into(),
                location: format!("iteration {}", history.len() + 1),
            });
        }
        history.push(res);
        if res < cfg.tol {
            rho = next;
            break;
        }
        let n = history.len();
        if n >= 3 && history[n - 1] > history[n - 2] && history[n - 2] > history[n - 3] {
            return Err(KclError::Oscillation {
                damping: cfg.damping,
                history,
            });
        }
        if n >= cfg.max_iter {
            return Err(KclError::NoConvergence {
                what: "stationary fixed point".into(),
                iterations: n,
                residual: res,
                history,
            });
        }
        for (r, x) in rho.iter_mut().zip(&next) {
            *r = (1.0 - cfg.damping) * *r + cfg.damping * x;
        }
    }
    let density = GridDensity::product(*grid, &rho, &maxwellian(grid, beta))?;
    let bm = density.boundary_mass();
    if bm > cfg.boundary_mass_tol {
        return Err(KclError::AssumptionViolated(format!(
            "fixed point puts mass {bm:e} on the grid boundary (limit {:e}); enlarge the domain",
            cfg.boundary_mass_tol
        )));
    }
    Ok(FixedPoint {
        density,
        x_density: rho,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::potential::{
        convex_benchmark, nonconvex_benchmark, DissipativityConstants, GaussianKernel,
        QuadraticConfinement, ZeroInteraction,
    };
    use crate::vlasov::{free_energy, GridDensity};

    fn grid(n: usize) -> GridSpec {
        GridSpec::symmetric(8.0, n, 8.0, n).unwrap()
    }

    #[test]
    fn no_interaction_converges_at_once_to_reference() {
        let c = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap().constants;
        let spec = PotentialSpec::new(
            Arc::new(QuadraticConfinement { stiffness: 1.0 }),
            Arc::new(ZeroInteraction),
            1,
            DissipativityConstants {
                c_w: 0.0,
                hess_w_mixed_sup: 0.0,
                hess_w_sup: 0.0,
                ..c
            },
        )
        .unwrap();
        let fp =
            stationary_fixed_point(&spec, 1.0, &grid(80), &FixedPointConfig::default()).unwrap();
        assert_eq!(fp.iterations(), 1);
        let alpha = GridDensity::gaussian(grid(80), 0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(fp.density.sup_distance(&alpha).unwrap() < 1e-14);
        assert!((fp.density.mass() - 1.0).abs() < 1e-12);
    }

    fn cw_variance(n: usize) -> f64 {
        let spec = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let fp =
            stationary_fixed_point(&spec, 1.0, &grid(n), &FixedPointConfig::default()).unwrap();
        assert!((fp.density.mass() - 1.0).abs() < 1e-12);
        fp.density.moments().x_var
    }

    #[test]
    fn curie_weiss_variance() {
        // Quadratic W keeps every iterate Gaussian; the symmetric branch has
        // variance 1/(β(1+λ)) = 0.8.
        let (coarse, fine) = (cw_variance(64), cw_variance(128));
        let richardson = (4.0 * fine - coarse) / 3.0;
        assert!(
            (richardson - 0.8).abs() < 1e-6,
            "{coarse} {fine} {richardson}"
        );
        assert!((fine - 0.8).abs() < 1e-4);
    }

    #[test]
    fn residual_decreases_on_benchmarks() {
        for b in [convex_benchmark(), nonconvex_benchmark()] {
            let spec = b.spec(1.0, 2f64.sqrt()).unwrap();
            for theta in [0.25, 0.5] {
                let cfg = FixedPointConfig {
                    damping: theta,
                    ..FixedPointConfig::default()
                };
                let fp = stationary_fixed_point(&spec, 1.0, &grid(100), &cfg).unwrap();
                let h = &fp.residual_history;
                assert!(
                    h.windows(2).skip(1).all(|w| w[1] <= w[0]),
                    "{}: {h:?}",
                    b.name
                );
            }
        }
    }

    #[test]
    fn fixed_point_minimizes_free_energy() {
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let fp =
            stationary_fixed_point(&spec, 1.0, &grid(100), &FixedPointConfig::default()).unwrap();
        let e0 = free_energy(&fp.density, &spec, 1.0).unwrap();
        for (m, s) in [(0.1, 1.0), (0.0, 0.9), (-0.2, 1.1)] {
            let nu = GridDensity::gaussian(grid(100), m, s, 0.0, 1.0).unwrap();
            assert!(free_energy(&nu, &spec, 1.0).unwrap() > e0);
        }
    }

    #[test]
    fn errors() {
        let spec = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let cfg = FixedPointConfig {
            max_iter: 2,
            ..FixedPointConfig::default()
        };
        match stationary_fixed_point(&spec, 1.0, &grid(64), &cfg) {
            Err(KclError::NoConvergence { history, .. }) => assert_eq!(history.len(), 2),
            other => panic!("{other:?}"),
        }
        let narrow = GridSpec::symmetric(1.0, 32, 1.0, 32).unwrap();
        assert!(matches!(
            stationary_fixed_point(&spec, 1.0, &narrow, &FixedPointConfig::default()),
            Err(KclError::AssumptionViolated(_))
        ));
        // Strong repulsion with undamped updates overshoots back and forth.
        let strong = PotentialSpec::new(
            Arc::new(QuadraticConfinement { stiffness: 1.0 }),
            Arc::new(GaussianKernel {
                amplitude: 40.0,
                width: 0.5,
            }),
            1,
            spec.constants,
        )
        .unwrap();
        let cfg = FixedPointConfig {
            damping: 1.0,
            ..FixedPointConfig::default()
        };
        let r = stationary_fixed_point(&strong, 1.0, &grid(64), &cfg);
        assert!(matches!(r, Err(KclError::Oscillation { .. })), "{r:?}");
    }
}
