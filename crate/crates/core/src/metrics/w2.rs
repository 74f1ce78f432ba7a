//! Empirical 2-Wasserstein distances between uniform point clouds.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::assignment::solve_assignment;
use crate::error::{KclError, Result};
use crate::registry::{param_or, positive, Params, Registry};
use crate::rng::{tags, NoiseStream};

/// Largest cloud handled by the exact estimator.
pub const EXACT_MAX_POINTS: usize = 4096;

pub trait TransportEstimator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// `W₂` between the uniform measures on the rows (width `k`) of `a`
    /// and `b`.
    fn w2(&self, a: &[f64], b: &[f64], k: usize) -> Result<f64>;
}

fn rows(a: &[f64], k: usize, what: &str) -> Result<usize> {
    if k == 0 || !a.len().is_multiple_of(k) {
        return Err(KclError::invalid(
            what,
            format!("length {} is not a multiple of k = {k}", a.len()),
        ));
    }
    if a.is_empty() {
        return Err(KclError::invalid(what, "empty cloud"));
    }
    if let Some(i) = a.iter().position(|v| !v.is_finite()) {
        return Err(KclError::NonFinite {
            what: what.to_string(),
            location: format!("point {}", i / k),
        });
    }
    Ok(a.len() / k)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact `W₂` by linear assignment on squared Euclidean costs. Sizes must be
/// equal, or one must divide the other (the smaller cloud is then
/// replicated, which leaves its empirical measure unchanged).
#[derive(Debug, Default)]
pub struct ExactW2;

impl TransportEstimator for ExactW2 {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn w2(&self, a: &[f64], b: &[f64], k: usize) -> Result<f64> {
        let (na, nb) = (rows(a, k, "cloud A")?, rows(b, k, "cloud B")?);
        let n = na.max(nb);
        if n % na != 0 || n % nb != 0 {
            return Err(KclError::invalid(
                "cloud sizes",
                format!("exact assignment needs equal sizes (or one dividing the other), got {na} and {nb}"),
            ));
        }
        if n > EXACT_MAX_POINTS {
            return Err(KclError::invalid(
                "cloud sizes",
                format!("exact assignment is capped at {EXACT_MAX_POINTS} points, got {n}"),
            ));
        }
        let expand = |x: &[f64], nx: usize| -> Vec<f64> {
            x.iter().cycle().take(n / nx * x.len()).cloned().collect()
        };
        let (a, b) = (expand(a, na), expand(b, nb));
        let asg = match k {
            1 => solve_assignment(n, |i, j| (a[i] - b[j]) * (a[i] - b[j]))?,
            2 => solve_assignment(n, |i, j| {
                let (dx, dy) = (a[2 * i] - b[2 * j], a[2 * i + 1] - b[2 * j + 1]);
                dx * dx + dy * dy
            })?,
            _ => solve_assignment(n, |i, j| {
                sq_dist(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k])
            })?,
        };
        Ok((asg.total_cost.max(0.0) / n as f64).sqrt())
    }
}

/// `∫₀¹ |F⁻¹(u) − G⁻¹(u)|² du` for sorted samples, by merging quantile
/// breakpoints.
fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / na as f64;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0f64;
    let mut total = 0.0;
    while i < na && j < nb {
        let ua = (i + 1) as f64 / na as f64;
        let ub = (j + 1) as f64 / nb as f64;
        let next = ua.min(ub);
        let diff = a[i] - b[j];
        total += (next - u) * diff * diff;
        u = next;
        if ua <= ub {
            i += 1;
        }
        if ub <= ua {
            j += 1;
        }
    }
    total
}

/// One-dimensional `W₂` from order statistics; unequal sizes are handled by
/// exact quantile-function integration.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    rows(a, 1, "samples A")?;
    rows(b, 1, "samples B")?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(w2_sq_sorted(&a, &b).max(0.0).sqrt())
}

/// Sliced `W₂`: root mean of one-dimensional `W₂²` over random directions.
/// Never exceeds the exact `W₂`.
#[derive(Debug)]
pub struct SlicedW2 {
    pub projections: usize,
    pub seed: u64,
}

impl Default for SlicedW2 {
    fn default() -> Self {
        SlicedW2 {
            projections: 200,
            seed: 0,
        }
    }
}

impl TransportEstimator for SlicedW2 {
    fn name(&self) -> &'static str {
        "sliced"
    }

    fn w2(&self, a: &[f64], b: &[f64], k: usize) -> Result<f64> {
        let (na, nb) = (rows(a, k, "cloud A")?, rows(b, k, "cloud B")?);
        if k == 1 {
            return w2_1d(a, b);
        }
        let stream = NoiseStream::new(self.seed, &[tags::PROJECTIONS]);
        let mut theta = vec![0.0; k];
        let mut pa = vec![0.0; na];
        let mut pb = vec![0.0; nb];
        let mut acc = 0.0;
        for p in 0..self.projections {
            stream.fill_normals(p as u64, 0, &mut theta);
            let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
            theta.iter_mut().for_each(|t| *t /= norm);
            for (i, v) in pa.iter_mut().enumerate() {
                *v = a[i * k..(i + 1) * k]
                    .iter()
                    .zip(&theta)
                    .map(|(x, t)| x * t)
                    .sum();
            }
            for (i, v) in pb.iter_mut().enumerate() {
                *v = b[i * k..(i + 1) * k]
                    .iter()
                    .zip(&theta)
                    .map(|(x, t)| x * t)
                    .sum();
            }
            pa.sort_by(f64::total_cmp);
            pb.sort_by(f64::total_cmp);
            acc += w2_sq_sorted(&pa, &pb);
        }
        Ok((acc / self.projections as f64).max(0.0).sqrt())
    }
}

/// Debiased entropic transport (Sinkhorn divergence), log-domain.
/// `ε = eps_rel × median pairwise cost`; returns the root of
/// `OT_ε(a, b) − ½ OT_ε(a, a) − ½ OT_ε(b, b)`.
#[derive(Debug)]
pub struct SinkhornW2 {
    pub eps_rel: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornW2 {
    fn default() -> Self {
        SinkhornW2 {
            eps_rel: 0.01,
            max_iter: 100_000,
            tol: 1e-5,
        }
    }
}

fn logsumexp(vals: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vals);
    let m = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + buf.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl SinkhornW2 {
    /// Entropic transport value `⟨f, a⟩ + ⟨g, b⟩` for the dual potentials,
    /// reached by halving `ε` from the largest cost down to the target.
    /// Symmetric problems use the averaged fixed-point update.
    fn ot_eps(&self, cost: &[f64], n: usize, m: usize, eps: f64, symmetric: bool) -> Result<f64> {
        let (la, lb) = (-(n as f64).ln(), -(m as f64).ln());
        let mut f = vec![0.0; n];
        let mut g = vec![0.0; m];
        let mut buf = Vec::with_capacity(n.max(m));
        let mut schedule = Vec::new();
        let mut e = cost.iter().cloned().fold(0.0, f64::max);
        while e > eps {
            schedule.push(e);
            e *= 0.5;
        }
        schedule.push(eps);
        let mut it = 0usize;
        let mut viol = f64::NAN;
        for (level, &e) in schedule.iter().enumerate() {
            let last = level + 1 == schedule.len();
            let tol = if last { self.tol } else { 1e-3 };
            loop {
                if it == self.max_iter {
                    return Err(KclError::NoConvergence {
                        what: "Sinkhorn".into(),
                        iterations: self.max_iter,
                        residual: viol,
                        history: Vec::new(),
                    });
                }
                it += 1;
                if symmetric {
                    let t: Vec<f64> = (0..n)
                        .map(|i| {
                            -e * logsumexp(
                                (0..n).map(|j| la + (f[j] - cost[i * n + j]) / e),
                                &mut buf,
                            )
                        })
                        .collect();
                    for i in 0..n {
                        f[i] = 0.5 * (f[i] + t[i]);
                    }
                    g.copy_from_slice(&f);
                } else {
                    for j in 0..m {
                        g[j] = -e
                            * logsumexp(
                                (0..n).map(|i| la + (f[i] - cost[i * m + j]) / e),
                                &mut buf,
                            );
                    }
                    for i in 0..n {
                        f[i] = -e
                            * logsumexp(
                                (0..m).map(|j| lb + (g[j] - cost[i * m + j]) / e),
                                &mut buf,
                            );
                    }
                }
                viol = 0.0;
                for j in 0..m {
                    let s: f64 = (0..n)
                        .map(|i| (la + lb + (f[i] + g[j] - cost[i * m + j]) / e).exp())
                        .sum();
                    viol += (s - 1.0 / m as f64).abs();
                }
                if !viol.is_finite() {
                    return Err(KclError::NonFinite {
                        what: "Sinkhorn potentials".into(),
                        location: format!("iteration {it}"),
                    });
                }
                if viol < tol {
                    break;
                }
            }
        }
        Ok(f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64)
    }
}

impl TransportEstimator for SinkhornW2 {
    fn name(&self) -> &'static str {
        "sinkhorn"
    }

    fn w2(&self, a: &[f64], b: &[f64], k: usize) -> Result<f64> {
        let (na, nb) = (rows(a, k, "cloud A")?, rows(b, k, "cloud B")?);
        let matrix = |x: &[f64], nx: usize, y: &[f64], ny: usize| {
            let mut c = vec![0.0; nx * ny];
            for i in 0..nx {
                for j in 0..ny {
                    c[i * ny + j] = sq_dist(&x[i * k..(i + 1) * k], &y[j * k..(j + 1) * k]);
                }
            }
            c
        };
        let cab = matrix(a, na, b, nb);
        let mut sorted = cab.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let eps = self.eps_rel * if median > 0.0 { median } else { 1.0 };
        let ab = self.ot_eps(&cab, na, nb, eps, false)?;
        let aa = self.ot_eps(&matrix(a, na, a, na), na, na, eps, true)?;
        let bb = self.ot_eps(&matrix(b, nb, b, nb), nb, nb, eps, true)?;
        Ok((ab - 0.5 * aa - 0.5 * bb).max(0.0).sqrt())
    }
}

pub fn w2_registry() -> &'static Registry<dyn TransportEstimator> {
    static REG: OnceLock<Registry<dyn TransportEstimator>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn TransportEstimator> = Registry::new("W2 estimator");
        r.register("exact", &[], |_| Ok(Box::new(ExactW2)));
        r.register("sliced", &["projections", "seed"], |p| {
            let d = SlicedW2::default();
            let projections = param_or(p, "projections", d.projections as f64);
            positive("projections", projections)?;
            Ok(Box::new(SlicedW2 {
                projections: projections as usize,
                seed: param_or(p, "seed", 0.0) as u64,
            }))
        });
        r.register("sinkhorn", &["eps_rel", "max_iter", "tol"], |p| {
            let d = SinkhornW2::default();
            Ok(Box::new(SinkhornW2 {
                eps_rel: positive("eps_rel", param_or(p, "eps_rel", d.eps_rel))?,
                max_iter: positive("max_iter", param_or(p, "max_iter", d.max_iter as f64))?
                    as usize,
                tol: positive("tol", param_or(p, "tol", d.tol))?,
            }))
        });
        r
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    Exact,
    Sinkhorn,
    Sliced,
}

impl W2Method {
    pub fn name(self) -> &'static str {
        match self {
            W2Method::Exact => "exact",
            W2Method::Sinkhorn => "sinkhorn",
            W2Method::Sliced => "sliced",
        }
    }
}

/// `W₂` between two clouds with the named method at default settings.
pub fn w2_empirical(a: &[f64], b: &[f64], k: usize, method: W2Method) -> Result<f64> {
    w2_registry()
        .create(method.name(), &Params::new())?
        .w2(a, b, k)
}
