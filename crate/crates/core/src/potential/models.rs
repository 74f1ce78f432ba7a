//! Built-in potential catalog.
//!
//! All models have bounded derivatives of order two and higher, so
//! quartic double wells are deliberately absent.

use std::sync::OnceLock;

use super::{Confinement, Interaction};
use crate::error::{KclError, Result};
use crate::registry::{param_or, positive, Params, Registry};

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `V(x) = k |x|² / 2`.
#[derive(Clone, Debug)]
pub struct QuadraticConfinement {
    pub stiffness: f64,
}

impl Confinement for QuadraticConfinement {
    fn name(&self) -> &'static str {
        "quadratic"
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.stiffness * norm2(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.stiffness * xi;
        }
    }
    fn hessian_norm(&self, _x: &[f64]) -> f64 {
        self.stiffness.abs()
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(self.stiffness.abs())
    }
    fn params(&self) -> Params {
        Params::from([("stiffness".to_string(), self.stiffness)])
    }
}

/// `V(x) = k |x|² / 2 + a exp(−|x|² / (2w²))`: a quadratic well with a
/// Gaussian bump (or dip, for `a < 0`) at the origin.
#[derive(Clone, Debug)]
pub struct BumpConfinement {
    pub stiffness: f64,
    pub amplitude: f64,
    pub width: f64,
}

impl BumpConfinement {
    fn bump(&self, r2: f64) -> f64 {
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    /// `sup |∇ bump|`, reached at `|x| = w`.
    pub fn bump_gradient_sup(&self) -> f64 {
        self.amplitude.abs() * (-0.5f64).exp() / self.width
    }
}

impl Confinement for BumpConfinement {
    fn name(&self) -> &'static str {
        "bump"
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2 = norm2(x);
        0.5 * self.stiffness * r2 + self.bump(r2)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let w2 = self.width * self.width;
        let f = self.stiffness - self.bump(norm2(x)) / w2;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = f * xi;
        }
    }
    fn hessian_norm(&self, x: &[f64]) -> f64 {
        let w2 = self.width * self.width;
        let r2 = norm2(x);
        let b = self.bump(r2);
        let radial = self.stiffness + b * (r2 / (w2 * w2) - 1.0 / w2);
        let transverse = self.stiffness - b / w2;
        if x.len() > 1 {
            radial.abs().max(transverse.abs())
        } else {
            radial.abs()
        }
    }
    fn hessian_sup(&self) -> Option<f64> {
        // Radial curvature spans k + (a/w²)·[−1, 2e^{−3/2}], transverse k − (a/w²)·[0, 1].
        let s = self.amplitude / (self.width * self.width);
        let candidates = [
            self.stiffness - s,
            self.stiffness + 2.0 * (-1.5f64).exp() * s,
            self.stiffness,
        ];
        Some(candidates.iter().fold(0.0f64, |m, c| m.max(c.abs())))
    }
    fn params(&self) -> Params {
        Params::from([
            ("stiffness".to_string(), self.stiffness),
            ("amplitude".to_string(), self.amplitude),
            ("width".to_string(), self.width),
        ])
    }
}

/// `W = 0`.
#[derive(Clone, Debug, Default)]
pub struct ZeroInteraction;

impl Interaction for ZeroInteraction {
    fn name(&self) -> &'static str {
        "zero"
    }
    fn value(&self, _x: &[f64], _xp: &[f64]) -> f64 {
        0.0
    }
    fn gradient_x(&self, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn mixed_hessian_norm(&self, _x: &[f64], _xp: &[f64]) -> f64 {
        0.0
    }
    fn hessian_norm(&self, _x: &[f64], _xp: &[f64]) -> f64 {
        0.0
    }
    fn mixed_hessian_sup(&self) -> Option<f64> {
        Some(0.0)
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(0.0)
    }
    fn params(&self) -> Params {
        Params::new()
    }
    fn is_zero(&self) -> bool {
        true
    }
    fn translation_invariant(&self) -> bool {
        true
    }
    fn length_scale(&self) -> Option<f64> {
        None
    }
    fn field_at(&self, _x: &[f64], _s: &[f64], _w: Option<&[f64]>, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|o| *o = 0.0);
        0.0
    }
}

/// Curie–Weiss interaction `W(x, x') = λ |x − x'|² / 2`.
#[derive(Clone, Debug)]
pub struct CurieWeiss {
    pub lambda: f64,
}

impl Interaction for CurieWeiss {
    fn name(&self) -> &'static str {
        "curie_weiss"
    }
    fn value(&self, x: &[f64], xp: &[f64]) -> f64 {
        0.5 * self.lambda
            * x.iter()
                .zip(xp)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
    }
    fn gradient_x(&self, x: &[f64], xp: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(xp) {
            *o = self.lambda * (a - b);
        }
    }
    fn mixed_hessian_norm(&self, _x: &[f64], _xp: &[f64]) -> f64 {
        self.lambda.abs()
    }
    fn hessian_norm(&self, _x: &[f64], _xp: &[f64]) -> f64 {
        2.0 * self.lambda.abs()
    }
    fn mixed_hessian_sup(&self) -> Option<f64> {
        Some(self.lambda.abs())
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(2.0 * self.lambda.abs())
    }
    fn params(&self) -> Params {
        Params::from([("lambda".to_string(), self.lambda)])
    }
    fn translation_invariant(&self) -> bool {
        true
    }
    fn length_scale(&self) -> Option<f64> {
        None
    }
    fn field_at(
        &self,
        x: &[f64],
        sources: &[f64],
        weights: Option<&[f64]>,
        grad: &mut [f64],
    ) -> f64 {
        let d = x.len();
        let n = sources.len() / d;
        let uniform = 1.0 / n as f64;
        let mut value = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for j in 0..n {
            let w = weights.map_or(uniform, |w| w[j]);
            let s = &sources[j * d..(j + 1) * d];
            let mut r2 = 0.0;
            for k in 0..d {
                let u = x[k] - s[k];
                r2 += u * u;
                grad[k] += w * u;
            }
            value += w * r2;
        }
        grad.iter_mut().for_each(|g| *g *= self.lambda);
        0.5 * self.lambda * value
    }
}

/// Gaussian-kernel interaction `W(x, x') = A exp(−|x − x'|² / (2s²))`;
/// attractive for `A < 0`.
#[derive(Clone, Debug)]
pub struct GaussianKernel {
    pub amplitude: f64,
    pub width: f64,
}

impl GaussianKernel {
    /// Smallest curvature of `u ↦ A exp(−u²/(2s²))`, i.e. the best `c_W`
    /// with `c_W' = 0`.
    pub fn min_curvature(&self) -> f64 {
        let s2 = self.width * self.width;
        if self.amplitude >= 0.0 {
            -self.amplitude / s2
        } else {
            self.amplitude * 2.0 * (-1.5f64).exp() / s2
        }
    }

    fn kernel_hessian_norm(&self, r2: f64, d: usize) -> f64 {
        let s2 = self.width * self.width;
        let e = (self.amplitude / s2) * (-r2 / (2.0 * s2)).exp();
        let radial = e * (r2 / s2 - 1.0);
        if d > 1 {
            radial.abs().max(e.abs())
        } else {
            radial.abs()
        }
    }
}

impl Interaction for GaussianKernel {
    fn name(&self) -> &'static str {
        "gaussian_kernel"
    }
    fn value(&self, x: &[f64], xp: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }
    fn gradient_x(&self, x: &[f64], xp: &[f64], out: &mut [f64]) {
        let s2 = self.width * self.width;
        let r2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
        let f = -self.amplitude / s2 * (-r2 / (2.0 * s2)).exp();
        for ((o, a), b) in out.iter_mut().zip(x).zip(xp) {
            *o = f * (a - b);
        }
    }
    fn mixed_hessian_norm(&self, x: &[f64], xp: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum();
        self.kernel_hessian_norm(r2, x.len())
    }
    fn hessian_norm(&self, x: &[f64], xp: &[f64]) -> f64 {
        2.0 * self.mixed_hessian_norm(x, xp)
    }
    fn mixed_hessian_sup(&self) -> Option<f64> {
        Some(self.amplitude.abs() / (self.width * self.width))
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(2.0 * self.amplitude.abs() / (self.width * self.width))
    }
    fn params(&self) -> Params {
        Params::from([
            ("amplitude".to_string(), self.amplitude),
            ("width".to_string(), self.width),
        ])
    }
    fn translation_invariant(&self) -> bool {
        true
    }
    fn length_scale(&self) -> Option<f64> {
        Some(self.width)
    }
    fn field_at(
        &self,
        x: &[f64],
        sources: &[f64],
        weights: Option<&[f64]>,
        grad: &mut [f64],
    ) -> f64 {
        let d = x.len();
        let n = sources.len() / d;
        let uniform = 1.0 / n as f64;
        let inv2s2 = 1.0 / (2.0 * self.width * self.width);
        let mut value = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        if d == 1 {
            let x0 = x[0];
            let mut g0 = 0.0;
            for j in 0..n {
                let w = weights.map_or(uniform, |w| w[j]);
                let u = x0 - sources[j];
                let e = w * (-u * u * inv2s2).exp();
                value += e;
                g0 += e * u;
            }
            grad[0] = -2.0 * inv2s2 * self.amplitude * g0;
            return self.amplitude * value;
        }
        for j in 0..n {
            let w = weights.map_or(uniform, |w| w[j]);
            let s = &sources[j * d..(j + 1) * d];
            let r2: f64 = x.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
            let e = w * (-r2 * inv2s2).exp();
            value += e;
            for k in 0..d {
                grad[k] += e * (x[k] - s[k]);
            }
        }
        grad.iter_mut()
            .for_each(|g| *g *= -2.0 * inv2s2 * self.amplitude);
        self.amplitude * value
    }
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(KclError::invalid(name, "must be finite"))
    }
}

/// Registry of confinement models: `quadratic`, `bump`.
pub fn confinement_registry() -> &'static Registry<dyn Confinement> {
    static REG: OnceLock<Registry<dyn Confinement>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Confinement> = Registry::new("confinement");
        r.register("quadratic", &["stiffness"], |p| {
            Ok(Box::new(QuadraticConfinement {
                stiffness: positive("stiffness", param_or(p, "stiffness", 1.0))?,
            }))
        });
        r.register("bump", &["stiffness", "amplitude", "width"], |p| {
            Ok(Box::new(BumpConfinement {
                stiffness: positive("stiffness", param_or(p, "stiffness", 1.0))?,
                amplitude: finite("amplitude", param_or(p, "amplitude", 1.0))?,
                width: positive("width", param_or(p, "width", 1.0))?,
            }))
        });
        r
    })
}

/// Registry of interaction models: `zero`, `curie_weiss`, `gaussian_kernel`.
pub fn interaction_registry() -> &'static Registry<dyn Interaction> {
    static REG: OnceLock<Registry<dyn Interaction>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Interaction> = Registry::new("interaction");
        r.register("zero", &[], |_| Ok(Box::new(ZeroInteraction)));
        r.register("curie_weiss", &["lambda"], |p| {
            Ok(Box::new(CurieWeiss {
                lambda: finite("lambda", param_or(p, "lambda", 0.25))?,
            }))
        });
        r.register("gaussian_kernel", &["amplitude", "width"], |p| {
            Ok(Box::new(GaussianKernel {
                amplitude: finite("amplitude", param_or(p, "amplitude", -0.1))?,
                width: positive("width", param_or(p, "width", 1.0))?,
            }))
        });
        r
    })
}
