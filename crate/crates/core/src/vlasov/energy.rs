use rayon::prelude::*;

use super::GridDensity;
use crate::error::{KclError, Result};
use crate::potential::PotentialSpec;

/// `K_ik = W(x_i, x_k) Δx` on the `x` nodes of a grid.
pub(crate) fn interaction_matrix(spec: &PotentialSpec, xs: &[f64], dx: f64) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    if spec.interaction.is_zero() {
        return k;
    }
    k.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (r, xk) in row.iter_mut().zip(xs) {
            *r = spec.interaction.value(&[xs[i]], &[*xk]) * dx;
        }
    });
    k
}

/// `Φ_i = Σ_k K_ik ρ_k`.
pub(crate) fn convolve(k: &[f64], rho: &[f64]) -> Vec<f64> {
    let n = rho.len();
    k.par_chunks(n)
        .map(|row| row.iter().zip(rho).map(|(a, b)| a * b).sum())
        .collect()
}

fn check_1d(spec: &PotentialSpec) -> Result<()> {
    if spec.dim != 1 {
        return Err(KclError::invalid("dim", "grid objects are one-dimensional"));
    }
    Ok(())
}

/// Cellwise `ln α` for `α ∝ exp(−β(V(x) + y²/2))`, normalized on the grid.
pub(crate) fn log_reference(nu: &GridDensity, spec: &PotentialSpec, beta: f64) -> Vec<f64> {
    let g = &nu.grid;
    let mut la = Vec::with_capacity(g.cells());
    for i in 0..g.n_x {
        let v = spec.confinement.value(&[g.x(i)]);
        for j in 0..g.n_y {
            let y = g.y(j);
            la.push(-beta * (v + 0.5 * y * y));
        }
    }
    let m = la.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + (la.iter().map(|v| (v - m).exp()).sum::<f64>() * nu.cell_area()).ln();
    la.iter_mut().for_each(|v| *v -= log_z);
    la
}

/// `E_f(ν) = H(ν | α) + (β/2) ∫∫ W(x, x') ν(dx) ν(dx')` with
/// `α ∝ exp(−β(V + |y|²/2))`, by midpoint quadrature (`0 ln 0 = 0`).
pub fn free_energy(nu: &GridDensity, spec: &PotentialSpec, beta: f64) -> Result<f64> {
    check_1d(spec)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(KclError::invalid("beta", "must be positive and finite"));
    }
    let la = log_reference(nu, spec, beta);
    let floor = f64::MIN_POSITIVE.ln();
    let mut clamped = 0usize;
    let mut h = 0.0;
    for (v, l) in nu.values.iter().zip(&la) {
        if *v > 0.0 {
            let l = if *l < floor {
                clamped += 1;
                floor
            } else {
                *l
            };
            h += v * (v.ln() - l);
        }
    }
    if clamped > 0 {
        log::warn!("reference density underflows in {clamped} occupied cells; clamped");
    }
    h *= nu.cell_area();
    let rho = nu.x_marginal();
    let dx = nu.grid.dx();
    let inter = if spec.interaction.is_zero() {
        0.0
    } else {
        let k = interaction_matrix(spec, &nu.grid.x_nodes(), dx);
        let phi = convolve(&k, &rho);
        0.5 * beta * phi.iter().zip(&rho).map(|(p, r)| p * r).sum::<f64>() * dx
    };
    let e = h + inter;
    if !e.is_finite() {
        return Err(KclError::NonFinite {
            what: "free energy".into(),
            location: "grid quadrature".into(),
        });
    }
    Ok(e)
}

/// Tolerance below zero accepted for `H_W` before it is treated as a sign of
/// a wrong minimizer.
pub const HW_TOLERANCE: f64 = 1e-7;

/// `H_W(ν) = E_f(ν) − E_f(m_∞)`.
pub fn mean_field_entropy(
    nu: &GridDensity,
    spec: &PotentialSpec,
    beta: f64,
    minimizer: &GridDensity,
) -> Result<f64> {
    nu.same_grid(minimizer)?;
    let hw = free_energy(nu, spec, beta)? - free_energy(minimizer, spec, beta)?;
    if hw < -HW_TOLERANCE {
        return Err(KclError::invalid(
            "minimizer",
            format!("H_W = {hw:e} is negative; the minimizer is wrong or the grid too coarse"),
        ));
    }
    Ok(hw)
}
