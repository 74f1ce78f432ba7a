//! Time-stepping schemes for `dX = Y dt`, `dY = −γY dt − ∇U dt + σ dB`.

use std::fmt;
use std::sync::OnceLock;

use crate::error::Result;
use crate::registry::Registry;

/// Per-step constants shared by every scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConstants {
    pub gamma: f64,
    pub sigma: f64,
    pub dt: f64,
}

/// Force evaluator: writes `∇U` at `positions` into the output slice.
pub type ForceEval<'a> = dyn FnMut(&[f64], &mut [f64]) -> Result<()> + 'a;

pub trait Integrator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Advances `(x, y)` by one step. On entry `force` holds `∇U(x)`; on exit
    /// it holds `∇U` at the new positions. `noise` is one standard normal per
    /// coordinate.
    fn step(
        &self,
        x: &mut [f64],
        y: &mut [f64],
        force: &mut [f64],
        eval: &mut ForceEval<'_>,
        noise: &[f64],
        c: &StepConstants,
    ) -> Result<()>;
}

/// Explicit Euler–Maruyama.
#[derive(Debug, Default)]
pub struct EulerMaruyama;

impl Integrator for EulerMaruyama {
    fn name(&self) -> &'static str {
        "euler_maruyama"
    }

    fn step(
        &self,
        x: &mut [f64],
        y: &mut [f64],
        force: &mut [f64],
        eval: &mut ForceEval<'_>,
        noise: &[f64],
        c: &StepConstants,
    ) -> Result<()> {
        let s = c.sigma * c.dt.sqrt();
        for i in 0..x.len() {
            let yi = y[i];
            x[i] += yi * c.dt;
            y[i] = yi - (c.gamma * yi + force[i]) * c.dt + s * noise[i];
        }
        eval(x, force)
    }
}

/// BAOAB splitting: half kick, half drift, exact Ornstein–Uhlenbeck
/// velocity update, half drift, half kick. One force evaluation per step.
#[derive(Debug, Default)]
pub struct Baoab;

impl Baoab {
    /// Damping factor `e^{−γ dt}` and noise scale of the exact OU update.
    pub fn ou_coefficients(c: &StepConstants) -> (f64, f64) {
        let damp = (-c.gamma * c.dt).exp();
        let scale = if c.gamma > 0.0 {
            c.sigma * (-(-2.0 * c.gamma * c.dt).exp_m1() / (2.0 * c.gamma)).sqrt()
        } else {
            c.sigma * c.dt.sqrt()
        };
        (damp, scale)
    }
}

impl Integrator for Baoab {
    fn name(&self) -> &'static str {
        "baoab"
    }

    fn step(
        &self,
        x: &mut [f64],
        y: &mut [f64],
        force: &mut [f64],
        eval: &mut ForceEval<'_>,
        noise: &[f64],
        c: &StepConstants,
    ) -> Result<()> {
        let h = 0.5 * c.dt;
        let (damp, scale) = Self::ou_coefficients(c);
        for i in 0..x.len() {
            let mut yi = y[i] - h * force[i];
            let mut xi = x[i] + h * yi;
            yi = damp * yi + scale * noise[i];
            xi += h * yi;
            x[i] = xi;
            y[i] = yi;
        }
        eval(x, force)?;
        for i in 0..x.len() {
            y[i] -= h * force[i];
        }
        Ok(())
    }
}

pub fn integrator_registry() -> &'static Registry<dyn Integrator> {
    static REG: OnceLock<Registry<dyn Integrator>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Integrator> = Registry::new("integrator");
        r.register("euler_maruyama", &[], |_| Ok(Box::new(EulerMaruyama)));
        r.register("baoab", &[], |_| Ok(Box::new(Baoab)));
        r
    })
}
