use crate::error::{KclError, Result};

/// `∫ |F_A(u) − G(u)| du` where `F_A` is the empirical CDF of `samples` and
/// `G` the CDF of a piecewise-constant density with cells of width `dx`
/// starting at `x_min`. The density is renormalized to unit mass.
pub fn w1_samples_vs_density(samples: &[f64], x_min: f64, dx: f64, density: &[f64]) -> Result<f64> {
    if samples.is_empty() || density.is_empty() {
        return Err(KclError::invalid("w1", "empty input"));
    }
    if !(dx > 0.0) || !x_min.is_finite() {
        return Err(KclError::invalid("w1", "need finite x_min and dx > 0"));
    }
    if samples.iter().any(|v| !v.is_finite())
        || density.iter().any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(KclError::invalid(
            "w1",
            "non-finite samples or negative density",
        ));
    }
    let mass: f64 = density.iter().sum::<f64>() * dx;
    if !(mass > 0.0) {
        return Err(KclError::invalid("w1", "density has zero mass"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let m = density.len();
    let x_max = x_min + m as f64 * dx;
    // CDF of the grid density at x.
    let cdf_edges: Vec<f64> = std::iter::once(0.0)
        .chain(density.iter().scan(0.0, |acc, v| {
            *acc += v * dx / mass;
            Some(*acc)
        }))
        .collect();
    let g = |x: f64| -> f64 {
        if x <= x_min {
            0.0
        } else if x >= x_max {
            1.0
        } else {
            let k = (((x - x_min) / dx) as usize).min(m - 1);
            cdf_edges[k] + density[k] / mass * (x - x_min - k as f64 * dx)
        }
    };
    // Breakpoints: every cell edge and every sample.
    let mut pts: Vec<f64> = (0..=m)
        .map(|k| x_min + k as f64 * dx)
        .chain(s.iter().cloned())
        .collect();
    pts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut k = 0usize;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        while k < s.len() && s[k] <= a {
            k += 1;
        }
        let c = k as f64 / n;
        // G is linear on [a, b]; integrate |c − G| exactly.
        let (ga, gb) = (g(a) - c, g(b) - c);
        total += if ga * gb >= 0.0 {
            0.5 * (ga.abs() + gb.abs()) * (b - a)
        } else {
            let r = ga.abs() / (ga.abs() + gb.abs());
            0.5 * (b - a) * (r * ga.abs() + (1.0 - r) * gb.abs())
        };
    }
    Ok(total)
}
