use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{KclError, Result};
use crate::particles::DecayCurve;

/// Empirical-measure rate `a(N)`: `N^{−1/2}` for `d = 1`,
/// `ln(1+N) N^{−1/2}` for `d = 2`, `N^{−2/d}` for `d ≥ 3`.
pub fn a_n(n: usize, d: usize) -> Result<f64> {
    if n == 0 || d == 0 {
        return Err(KclError::invalid("a_N", "N and d must be positive"));
    }
    let nf = n as f64;
    Ok(match d {
        1 => nf.powf(-0.5),
        2 => (1.0 + nf).ln() / nf.sqrt(),
        _ => nf.powf(-2.0 / d as f64),
    })
}

/// Ordinary least-squares line with a 95% confidence half-width on the slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_ci_halfwidth: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
    pub n_points: usize,
}

impl LineFit {
    pub fn slope_ci_contains(&self, v: f64) -> bool {
        (self.slope - v).abs() <= self.slope_ci_halfwidth
    }

    /// Two-sided Student-t half-width of the slope at confidence `level`.
    pub fn slope_ci_halfwidth_at(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(KclError::invalid("level", "must lie in (0, 1)"));
        }
        Ok(t_quantile(self.n_points, 0.5 + 0.5 * level)? * self.slope_se)
    }
}

fn t_quantile(n: usize, p: f64) -> Result<f64> {
    Ok(StudentsT::new(0.0, 1.0, n as f64 - 2.0)
        .map_err(|e| KclError::invalid("fit", e.to_string()))?
        .inverse_cdf(p))
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(KclError::invalid(
            "fit",
            format!("need at least 3 paired points, got {n}"),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(KclError::invalid("fit", "non-finite data"));
    }
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(KclError::invalid("fit", "abscissae are all equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let se = (ss_res / (nf - 2.0) / sxx).sqrt();
    let t = t_quantile(n, 0.975)?;
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        slope_ci_halfwidth: t * se,
        slope_se: se,
        n_points: n,
    })
}

/// Which part of a curve enters a rate fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowPolicy {
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    /// Fraction of the time range dropped at the start when `t_lo` is unset.
    pub drop_fraction: f64,
    /// Points with `value < noise_floor × stderr` are dropped.
    pub noise_floor: f64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy {
            t_lo: None,
            t_hi: None,
            drop_fraction: 0.1,
            noise_floor: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `χ` in `C e^{−χ t}`.
    pub rate: f64,
    /// `ln C`.
    pub log_prefactor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub ci_halfwidth: f64,
    pub n_points: usize,
    /// Set when `r² < 0.8`.
    pub flagged: bool,
}

/// Least squares on `(t, ln value)` over the policy window.
pub fn fit_exponential_rate(curve: &DecayCurve, policy: &WindowPolicy) -> Result<RateFit> {
    curve.validate()?;
    if curve.times.is_empty() {
        return Err(KclError::invalid("curve", "empty"));
    }
    let (t0, t1) = (curve.times[0], *curve.times.last().unwrap());
    let lo = policy.t_lo.unwrap_or(t0 + policy.drop_fraction * (t1 - t0));
    let hi = policy.t_hi.unwrap_or(t1);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for k in 0..curve.times.len() {
        let (t, v, se) = (curve.times[k], curve.values[k], curve.std_errors[k]);
        if t < lo - 1e-12 || t > hi + 1e-12 || !(v > 0.0) || !v.is_finite() {
            continue;
        }
        if se.is_finite() && v < policy.noise_floor * se {
            continue;
        }
        x.push(t);
        y.push(v.ln());
    }
    if x.len() < 5 {
        return Err(KclError::invalid(
            "window",
            format!("only {} usable points in [{lo}, {hi}] (need 5)", x.len()),
        ));
    }
    let f = linear_fit(&x, &y)?;
    Ok(RateFit {
        rate: -f.slope,
        log_prefactor: f.intercept,
        r_squared: f.r_squared,
        window: (x[0], *x.last().unwrap()),
        ci_halfwidth: f.slope_ci_halfwidth,
        n_points: f.n_points,
        flagged: f.r_squared < 0.8,
    })
}
