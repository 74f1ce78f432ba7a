//! The two canonical potential specifications shipped with the harness.

use std::sync::Arc;

use super::{
    BumpConfinement, Confinement, ConvexSplit, CurieWeiss, DissipativityConstants, GaussianKernel,
    Interaction, PotentialSpec, QuadraticConfinement,
};
use crate::error::Result;

/// A named potential specification whose `β` is filled in from the dynamics.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    confinement: Arc<dyn Confinement>,
    interaction: Arc<dyn Interaction>,
    constants: DissipativityConstants,
    split: ConvexSplit,
}

impl Benchmark {
    pub fn spec(&self, gamma: f64, sigma: f64) -> Result<PotentialSpec> {
        Ok(PotentialSpec::new(
            self.confinement.clone(),
            self.interaction.clone(),
            1,
            self.constants.with_dynamics(gamma, sigma),
        )?
        .with_convex_split(self.split))
    }

    pub fn by_name(name: &str) -> Option<Benchmark> {
        match name {
            "convex" => Some(convex_benchmark()),
            "nonconvex" => Some(nonconvex_benchmark()),
            _ => None,
        }
    }
}

/// `V(x) = x²/2`, Curie–Weiss `W` with `λ = 1/4`.
pub fn convex_benchmark() -> Benchmark {
    let v = QuadraticConfinement { stiffness: 1.0 };
    let w = CurieWeiss { lambda: 0.25 };
    let constants = DissipativityConstants {
        c_v: 1.0,
        c_v_prime: 0.0,
        c_w: w.lambda,
        c_w_prime: 0.0,
        r: 0.0,
        hess_w_mixed_sup: w.mixed_hessian_sup().unwrap(),
        hess_v_sup: v.hessian_sup().unwrap(),
        hess_w_sup: w.hessian_sup().unwrap(),
        beta: 1.0,
    };
    Benchmark {
        name: "convex",
        confinement: Arc::new(v),
        interaction: Arc::new(w),
        constants,
        // U itself is 1-convex: Hessian eigenvalues 1 and 1 + 2λ.
        split: ConvexSplit {
            rho: 1.0,
            u2_sup: 0.0,
        },
    }
}

/// `V(x) = x²/2 + exp(−x²/2)` (flat at the origin) with a weak attractive
/// Gaussian-kernel interaction `W = −0.1 exp(−|x − x'|²/2)`.
pub fn nonconvex_benchmark() -> Benchmark {
    let v = BumpConfinement {
        stiffness: 1.0,
        amplitude: 1.0,
        width: 1.0,
    };
    let w = GaussianKernel {
        amplitude: -0.1,
        width: 1.0,
    };
    // With G = sup|∇bump|: (∇V(x) − ∇V(y))·(x − y) ≥ r² − 2G r and ≥ 0, so
    // for any c_V < 1 the pair (c_V' = 2 G c_V, R = 2G / (1 − c_V)) works.
    let g = v.bump_gradient_sup();
    let c_v = 0.3;
    let constants = DissipativityConstants {
        c_v,
        c_v_prime: 2.0 * g * c_v * (1.0 + 1e-6),
        c_w: w.min_curvature(),
        c_w_prime: 0.0,
        r: 2.0 * g / (1.0 - c_v) * (1.0 + 1e-6),
        hess_w_mixed_sup: w.mixed_hessian_sup().unwrap(),
        hess_v_sup: v.hessian_sup().unwrap(),
        hess_w_sup: w.hessian_sup().unwrap(),
        beta: 1.0,
    };
    // U₁ = (|x|² + |x'|²)/2, U₂ = bump(x) + bump(x') + W ∈ [A, 2a].
    let split = ConvexSplit {
        rho: v.stiffness,
        u2_sup: (2.0 * v.amplitude).abs().max(w.amplitude.abs()),
    };
    Benchmark {
        name: "nonconvex",
        confinement: Arc::new(v),
        interaction: Arc::new(w),
        constants,
        split,
    }
}
