//! Confinement and interaction potentials, and the closed-form constants and
//! assumption checks built on them.
//!
//! The total pair potential is `U(x, x') = V(x) + V(x') + W(x, x')` with a
//! confinement `V` and a symmetric interaction `W`.

mod benchmarks;
mod certify;
mod models;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};
use crate::registry::Params;

pub use benchmarks::{convex_benchmark, nonconvex_benchmark, Benchmark};
pub use certify::{
    beta_zero, certify, check_dissipativity, hypocoercivity_m, kappa_rate, lsi_certificate,
    quadratic_envelope, zegarlinski_certificate, CertificateReport, CertifyOptions,
    DissipativityReport, EnvelopeReport, InequalityCheck, LsiReport, QuadratureConfig, ScanConfig,
    SupEstimate, ZegarlinskiReport,
};
pub use models::{
    confinement_registry, interaction_registry, BumpConfinement, CurieWeiss, GaussianKernel,
    QuadraticConfinement, ZeroInteraction,
};

/// A confinement potential `V` on `R^d`.
pub trait Confinement: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes `∇V(x)` into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Operator norm of `∇²V(x)`.
    fn hessian_norm(&self, x: &[f64]) -> f64;
    /// `sup_x ‖∇²V(x)‖` when the model knows it analytically.
    fn hessian_sup(&self) -> Option<f64>;
    fn params(&self) -> Params;
}

/// A symmetric interaction potential `W` on `R^d × R^d`.
pub trait Interaction: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn value(&self, x: &[f64], xp: &[f64]) -> f64;
    /// Writes `∇_x W(x, x')` into `out`.
    fn gradient_x(&self, x: &[f64], xp: &[f64], out: &mut [f64]);
    /// Operator norm of the mixed block `∇²_{x,x'} W(x, x')`.
    fn mixed_hessian_norm(&self, x: &[f64], xp: &[f64]) -> f64;
    /// Operator norm of the full Hessian of `W` on `R^{2d}`.
    fn hessian_norm(&self, x: &[f64], xp: &[f64]) -> f64;
    fn mixed_hessian_sup(&self) -> Option<f64>;
    fn hessian_sup(&self) -> Option<f64>;
    fn params(&self) -> Params;

    fn is_zero(&self) -> bool {
        false
    }

    /// `W(x, x')` depends on `x − x'` only.
    fn translation_invariant(&self) -> bool;

    /// Length over which `W` varies appreciably; `None` for low-degree
    /// polynomial interactions.
    fn length_scale(&self) -> Option<f64>;

    /// Weighted field of a source cloud at `x`: returns `Σ_j w_j W(x, s_j)`
    /// and writes `Σ_j w_j ∇_x W(x, s_j)` into `grad`. Uniform weights `1/n`
    /// when `weights` is `None`.
    fn field_at(
        &self,
        x: &[f64],
        sources: &[f64],
        weights: Option<&[f64]>,
        grad: &mut [f64],
    ) -> f64 {
        let d = x.len();
        let n = sources.len() / d;
        let mut g = vec![0.0; d];
        let mut value = 0.0;
        grad.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let w = weights.map_or(1.0 / n as f64, |w| w[j]);
            let s = &sources[j * d..(j + 1) * d];
            value += w * self.value(x, s);
            self.gradient_x(x, s, &mut g);
            for k in 0..d {
                grad[k] += w * g[k];
            }
        }
        value
    }
}

/// Constants of the dissipativity conditions
/// `(∇V(x) − ∇V(y))·(x − y) ≥ c_V |x−y|² − c_V' |x−y| 1{|x−y| ≤ R}` and
/// its analogue for `∇_x W(·, z)`, plus Hessian bounds and `β = 2γ/σ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipativityConstants {
    pub c_v: f64,
    pub c_v_prime: f64,
    pub c_w: f64,
    pub c_w_prime: f64,
    pub r: f64,
    /// `‖∇²_{x,x'} W‖_∞`
    pub hess_w_mixed_sup: f64,
    pub hess_v_sup: f64,
    pub hess_w_sup: f64,
    /// Inverse temperature, always derived from the dynamics.
    pub beta: f64,
}

impl DissipativityConstants {
    pub fn with_dynamics(mut self, gamma: f64, sigma: f64) -> Self {
        self.beta = beta_from(gamma, sigma);
        self
    }

    pub fn contraction(&self) -> f64 {
        self.c_v + self.c_w
    }

    pub fn defect(&self) -> f64 {
        self.c_v_prime + self.c_w_prime
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_v", self.c_v),
            ("c_v_prime", self.c_v_prime),
            ("c_w", self.c_w),
            ("c_w_prime", self.c_w_prime),
            ("r", self.r),
            ("hess_w_mixed_sup", self.hess_w_mixed_sup),
            ("hess_v_sup", self.hess_v_sup),
            ("hess_w_sup", self.hess_w_sup),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(KclError::invalid(name, "must be finite"));
            }
        }
        if self.c_v <= 0.0 {
            return Err(KclError::invalid("c_v", "must be positive"));
        }
        for (name, v) in [
            ("c_v_prime", self.c_v_prime),
            ("c_w_prime", self.c_w_prime),
            ("r", self.r),
            ("hess_w_mixed_sup", self.hess_w_mixed_sup),
            ("hess_v_sup", self.hess_v_sup),
            ("hess_w_sup", self.hess_w_sup),
        ] {
            if v < 0.0 {
                return Err(KclError::invalid(name, "must be nonnegative"));
            }
        }
        if self.beta <= 0.0 {
            return Err(KclError::invalid("beta", "must be positive"));
        }
        Ok(())
    }
}

/// `β = 2γ/σ²`.
pub fn beta_from(gamma: f64, sigma: f64) -> f64 {
    2.0 * gamma / (sigma * sigma)
}

/// Decomposition `U = U₁ + U₂` with `U₁` `ρ`-convex and `U₂` bounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexSplit {
    pub rho: f64,
    pub u2_sup: f64,
}

#[derive(Clone)]
pub struct PotentialSpec {
    pub confinement: Arc<dyn Confinement>,
    pub interaction: Arc<dyn Interaction>,
    pub dim: usize,
    pub constants: DissipativityConstants,
    pub convex_split: Option<ConvexSplit>,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("confinement", &self.confinement)
            .field("interaction", &self.interaction)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .field("convex_split", &self.convex_split)
            .finish()
    }
}

/// Value and gradient of a potential at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl PotentialSpec {
    pub fn new(
        confinement: Arc<dyn Confinement>,
        interaction: Arc<dyn Interaction>,
        dim: usize,
        constants: DissipativityConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KclError::invalid("dim", "must be at least 1"));
        }
        constants.validate()?;
        Ok(PotentialSpec {
            confinement,
            interaction,
            dim,
            constants,
            convex_split: None,
        })
    }

    pub fn with_convex_split(mut self, split: ConvexSplit) -> Self {
        self.convex_split = Some(split);
        self
    }

    /// Same potentials with `β` recomputed from the dynamics.
    pub fn with_dynamics(mut self, gamma: f64, sigma: f64) -> Self {
        self.constants = self.constants.with_dynamics(gamma, sigma);
        self
    }

    pub fn beta(&self) -> f64 {
        self.constants.beta
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(KclError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `U(x, x') = V(x) + V(x') + W(x, x')`.
    pub fn pair_value(&self, x: &[f64], xp: &[f64]) -> f64 {
        self.confinement.value(x) + self.confinement.value(xp) + self.interaction.value(x, xp)
    }

    /// `∇_x U(x, x') = ∇V(x) + ∇_x W(x, x')`.
    pub fn pair_gradient_x(&self, x: &[f64], xp: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; self.dim];
        self.confinement.gradient(x, out);
        self.interaction.gradient_x(x, xp, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += gi;
        }
    }
}

/// Evaluates `V(x), ∇V(x)` or, when `xp` is given, `W(x, x'), ∇_x W(x, x')`.
pub fn eval_potential(
    spec: &PotentialSpec,
    x: &[f64],
    xp: Option<&[f64]>,
) -> Result<PotentialEval> {
    spec.check_point(x)?;
    let mut grad = vec![0.0; spec.dim];
    let value = match xp {
        None => {
            spec.confinement.gradient(x, &mut grad);
            spec.confinement.value(x)
        }
        Some(xp) => {
            spec.check_point(xp)?;
            spec.interaction.gradient_x(x, xp, &mut grad);
            spec.interaction.value(x, xp)
        }
    };
    Ok(PotentialEval { value, grad })
}
