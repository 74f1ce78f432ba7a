//! Sampling the `N`-particle Gibbs measure `∝ exp(−β(|y|²/2 + U_N(x)))`.

use serde::{Deserialize, Serialize};

use super::kernels::{interaction_energy, ForceKernel};
use super::{ParticleState, SimParams};
use crate::error::{KclError, Result};
use crate::potential::PotentialSpec;
use crate::rng::{tags, NoiseStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Iterations with step-size adaptation.
    pub burn_in: usize,
    /// Iterations after burn-in with the step size frozen.
    pub iterations: usize,
    pub initial_step: f64,
    pub target_acceptance: f64,
    /// Standard deviation of the Gaussian starting point of the chain.
    pub init_std: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            burn_in: 2000,
            iterations: 2000,
            initial_step: 0.05,
            target_acceptance: 0.55,
            init_std: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    /// Acceptance rate over the post-burn-in iterations.
    pub acceptance_rate: f64,
    pub chain_length: usize,
    pub step_size: f64,
    /// Set when the frozen acceptance rate falls outside `[0.1, 0.9]`.
    pub acceptance_warning: bool,
    pub final_energy: f64,
}

#[derive(Clone, Debug)]
pub struct GibbsSample {
    pub state: ParticleState,
    pub diagnostics: McmcDiagnostics,
}

struct Point {
    x: Vec<f64>,
    grad: Vec<f64>,
    energy: f64,
}

impl Point {
    fn eval(x: Vec<f64>, spec: &PotentialSpec, kernel: &dyn ForceKernel) -> Result<Self> {
        let mut grad = vec![0.0; x.len()];
        let energy = interaction_energy(&x, spec, kernel, &mut grad)?;
        Ok(Point { x, grad, energy })
    }
}

/// Metropolis-adjusted Langevin chain on all `N·d` position coordinates
/// jointly, targeting `exp(−β U_N)`. Velocities are exact `N(0, 1/β)` draws.
/// The step size adapts toward the target acceptance during burn-in only.
pub fn sample_gibbs(
    n: usize,
    spec: &PotentialSpec,
    params: &SimParams,
    mcmc: &McmcConfig,
) -> Result<GibbsSample> {
    params.validate()?;
    if n == 0 {
        return Err(KclError::invalid("n", "must be positive"));
    }
    if !(mcmc.initial_step > 0.0) || !(mcmc.target_acceptance > 0.0 && mcmc.target_acceptance < 1.0)
    {
        return Err(KclError::invalid(
            "mcmc",
            "need initial_step > 0 and target_acceptance in (0, 1)",
        ));
    }
    if mcmc.iterations == 0 {
        return Err(KclError::invalid("mcmc.iterations", "must be positive"));
    }
    let beta = params.beta();
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(KclError::invalid(
            "sigma",
            "Gibbs sampling needs gamma > 0 and sigma > 0",
        ));
    }
    let kernel = params.build_kernel()?;
    let d = spec.dim;
    let len = n * d;
    let stream = NoiseStream::new(params.seed, &[tags::MALA]);

    let mut x0 = vec![0.0; len];
    stream.fill_matrix(0, d, &mut x0);
    x0.iter_mut().for_each(|v| *v *= mcmc.init_std);
    let mut cur = Point::eval(x0, spec, kernel.as_ref())?;

    let mut h = mcmc.initial_step;
    let mut xi = vec![0.0; len];
    let mut accepted_frozen = 0usize;
    let total = mcmc.burn_in + mcmc.iterations;
    let mut window_prob = 0.0;
    let mut window_index = 0usize;
    const WINDOW: usize = 25;
    for it in 0..total {
        stream.fill_matrix(1 + 2 * it as u64, d, &mut xi);
        let s = (2.0 * h).sqrt();
        let prop_x: Vec<f64> = (0..len)
            .map(|k| cur.x[k] - h * beta * cur.grad[k] + s * xi[k])
            .collect();
        let prop = Point::eval(prop_x, spec, kernel.as_ref())?;
        let mut fwd = 0.0;
        let mut bwd = 0.0;
        for k in 0..len {
            let a = prop.x[k] - cur.x[k] + h * beta * cur.grad[k];
            let b = cur.x[k] - prop.x[k] + h * beta * prop.grad[k];
            fwd += a * a;
            bwd += b * b;
        }
        let log_ratio = -beta * (prop.energy - cur.energy) - (bwd - fwd) / (4.0 * h);
        let u = stream.uniform(2 + 2 * it as u64, u32::MAX, 0);
        let accept = log_ratio.is_finite() && u.ln() < log_ratio;
        if accept {
            cur = prop;
        }
        if it < mcmc.burn_in {
            window_prob += if log_ratio.is_finite() {
                log_ratio.min(0.0).exp()
            } else {
                0.0
            };
            if (it + 1) % WINDOW == 0 {
                let rate = window_prob / WINDOW as f64;
                let gain = 2.0 / (1.0 + window_index as f64).sqrt();
                h *= (gain * (rate - mcmc.target_acceptance)).exp();
                window_prob = 0.0;
                window_index += 1;
            }
        } else {
            accepted_frozen += accept as usize;
        }
    }
    if !cur.energy.is_finite() {
        return Err(KclError::NonFinite {
            what: "Gibbs energy".into(),
            location: "final chain state".into(),
        });
    }
    let acceptance_rate = accepted_frozen as f64 / mcmc.iterations as f64;
    let acceptance_warning = !(0.1..=0.9).contains(&acceptance_rate);
    if acceptance_warning {
        log::warn!(
            "MALA acceptance rate {acceptance_rate:.3} outside [0.1, 0.9] with step {h:.3e}"
        );
    }

    let mut y = vec![0.0; len];
    NoiseStream::new(params.seed, &[tags::MALA, 1]).fill_matrix(0, d, &mut y);
    let sd = beta.recip().sqrt();
    y.iter_mut().for_each(|v| *v *= sd);
    let state = ParticleState::new(n, d, cur.x, y)?;
    Ok(GibbsSample {
        state,
        diagnostics: McmcDiagnostics {
            acceptance_rate,
            chain_length: total,
            step_size: h,
            acceptance_warning,
            final_energy: cur.energy,
        },
    })
}
