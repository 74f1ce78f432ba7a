use std::io::{BufWriter, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{free_energy, GridDensity, GridSpec};
use crate::error::{KclError, Result};
use crate::particles::{ForceKernel, MeanFieldReference, SimParams};
use crate::potential::{Interaction, PotentialSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VfpConfig {
    /// Diagnostics are recorded every this many steps (and at the end).
    pub diagnostics_stride: usize,
    /// Keep the `x`-marginal after every step.
    pub record_marginals: bool,
    /// Largest mass allowed in the outer two cell layers.
    pub boundary_mass_tol: f64,
    /// Negative values above `−negativity_tol × max` are rounded to zero.
    pub negativity_tol: f64,
    /// `E_f(m_∞)`, used for the `Hw` column; `NaN` there when unset.
    pub minimizer_free_energy: Option<f64>,
}

impl Default for VfpConfig {
    fn default() -> Self {
        VfpConfig {
            diagnostics_stride: 10,
            record_marginals: false,
            boundary_mass_tol: 1e-4,
            negativity_tol: 1e-12,
            minimizer_free_energy: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VfpDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub free_energy: f64,
    #[serde(rename = "Hw")]
    pub hw: f64,
    pub x_mean: f64,
    pub x_var: f64,
    pub y_var: f64,
}

pub const DIAGNOSTICS_CSV_HEADER: &str = "t,mass,free_energy,Hw,x_mean,x_var,y_var";

pub fn write_diagnostics_csv<W: Write>(w: W, rows: &[VfpDiagnostics]) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{DIAGNOSTICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.t, r.mass, r.free_energy, r.hw, r.x_mean, r.x_var, r.y_var
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct VfpSolution {
    pub density: GridDensity,
    pub diagnostics: Vec<VfpDiagnostics>,
    /// `(t, ρ_t)` after every step when requested, starting at the initial time.
    pub marginals: Vec<(f64, Vec<f64>)>,
}

/// `z / (e^z − 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Monotonized-central limited slope.
#[inline]
fn mc_slope(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else {
        let s = a.signum();
        s * (2.0 * a.abs()).min(2.0 * b.abs()).min(0.5 * (a + b).abs())
    }
}

/// One conservative flux-limited (Lax–Wendroff/MC) step of `∂_t f + c ∂_x f = 0`
/// with zero flux through both ends.
fn advect_row(f: &mut [f64], c: f64, dt: f64, dx: f64, flux: &mut [f64]) {
    let n = f.len();
    let nu = c.abs() * dt / dx;
    flux[0] = 0.0;
    flux[n] = 0.0;
    for i in 0..n - 1 {
        // Face between cells i and i+1.
        flux[i + 1] = if c > 0.0 {
            let s = if i >= 1 {
                mc_slope(f[i] - f[i - 1], f[i + 1] - f[i])
            } else {
                0.0
            };
            c * (f[i] + 0.5 * (1.0 - nu) * s)
        } else if c < 0.0 {
            let s = if i + 2 < n {
                mc_slope(f[i + 1] - f[i], f[i + 2] - f[i + 1])
            } else {
                0.0
            };
            c * (f[i + 1] - 0.5 * (1.0 - nu) * s)
        } else {
            0.0
        };
    }
    let r = dt / dx;
    for i in 0..n {
        f[i] -= r * (flux[i + 1] - flux[i]);
    }
}

/// Crank–Nicolson step of `∂_t f = ∂_y(D ∂_y f + (F + γy) f)` with
/// Scharfetter–Gummel (Chang–Cooper) face fluxes and zero flux at the ends.
#[allow(clippy::too_many_arguments)]
fn drift_diffuse_row(
    f: &mut [f64],
    force: f64,
    gamma: f64,
    diff: f64,
    ys: &[f64],
    dy: f64,
    dt: f64,
    work: &mut [Vec<f64>; 5],
) {
    let n = f.len();
    let k = diff / (dy * dy);
    let [alpha, beta_, rhs, cp, dp] = work;
    for j in 0..n - 1 {
        let y_face = 0.5 * (ys[j] + ys[j + 1]);
        let p = -(force + gamma * y_face) * dy / diff;
        alpha[j] = k * bernoulli(-p);
        beta_[j] = k * bernoulli(p);
    }
    alpha[n - 1] = 0.0;
    beta_[n - 1] = 0.0;
    // (A f)_j = α_{j−1} f_{j−1} − (α_j + β_{j−1}) f_j + β_j f_{j+1}.
    let h = 0.5 * dt;
    for j in 0..n {
        let lo = if j > 0 { alpha[j - 1] } else { 0.0 };
        let bl = if j > 0 { beta_[j - 1] } else { 0.0 };
        let diag = -(alpha[j] + bl);
        let mut af = diag * f[j];
        if j > 0 {
            af += lo * f[j - 1];
        }
        if j + 1 < n {
            af += beta_[j] * f[j + 1];
        }
        rhs[j] = f[j] + h * af;
    }
    // Thomas on (I − hA): sub = −h α_{j−1}, diag = 1 + h(α_j + β_{j−1}), sup = −h β_j.
    for j in 0..n {
        let sub = if j > 0 { -h * alpha[j - 1] } else { 0.0 };
        let diag = 1.0 + h * (alpha[j] + if j > 0 { beta_[j - 1] } else { 0.0 });
        let sup = if j + 1 < n { -h * beta_[j] } else { 0.0 };
        let (c_prev, d_prev) = if j > 0 {
            (cp[j - 1], dp[j - 1])
        } else {
            (0.0, 0.0)
        };
        let m = diag - sub * c_prev;
        cp[j] = sup / m;
        dp[j] = (rhs[j] - sub * d_prev) / m;
    }
    f[n - 1] = dp[n - 1];
    for j in (0..n - 1).rev() {
        f[j] = dp[j] - cp[j] * f[j + 1];
    }
}

/// `F(x_i) = V'(x_i) + Σ_k ∂_x W(x_i, x_k) ρ_k Δx`.
fn mean_field(spec: &PotentialSpec, xs: &[f64], rho: &[f64], dx: f64) -> Vec<f64> {
    xs.par_iter()
        .map(|&x| {
            let mut g = [0.0];
            spec.confinement.gradient(&[x], &mut g);
            let mut f = g[0];
            if !spec.interaction.is_zero() {
                let mut s = 0.0;
                for (xk, r) in xs.iter().zip(rho) {
                    spec.interaction.gradient_x(&[x], &[*xk], &mut g);
                    s += g[0] * r;
                }
                f += s * dx;
            }
            f
        })
        .collect()
}

struct Solver {
    gamma: f64,
    diff: f64,
    dt: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    dx: f64,
    dy: f64,
    nx: usize,
    ny: usize,
    /// Values transposed to `y`-outer for the `x` sweeps.
    transposed: Vec<f64>,
}

impl Solver {
    fn x_half_step(&mut self, f: &mut GridDensity) {
        let (nx, ny) = (self.nx, self.ny);
        for i in 0..nx {
            for j in 0..ny {
                self.transposed[j * nx + i] = f.values[i * ny + j];
            }
        }
        let (ys, dt, dx) = (&self.ys, 0.5 * self.dt, self.dx);
        self.transposed
            .par_chunks_mut(nx)
            .enumerate()
            .for_each_init(
                || vec![0.0; nx + 1],
                |flux, (j, row)| advect_row(row, ys[j], dt, dx, flux),
            );
        for i in 0..nx {
            for j in 0..ny {
                f.values[i * ny + j] = self.transposed[j * nx + i];
            }
        }
    }

    fn y_step(&self, f: &mut GridDensity, force: &[f64]) {
        let ny = self.ny;
        let (gamma, diff, dy, dt, ys) = (self.gamma, self.diff, self.dy, self.dt, &self.ys);
        f.values.par_chunks_mut(ny).zip(force).for_each_init(
            || {
                [
                    vec![0.0; ny],
                    vec![0.0; ny],
                    vec![0.0; ny],
                    vec![0.0; ny],
                    vec![0.0; ny],
                ]
            },
            |work, (row, &fi)| drift_diffuse_row(row, fi, gamma, diff, ys, dy, dt, work),
        );
    }

    fn check_cfl(&self, force: &[f64]) -> Result<()> {
        let ymax = self.ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let fmax = force.iter().fold(0.0f64, |m, v| m.max(v.abs())) + self.gamma * ymax;
        let limits = [
            ("x-transport (dx / max|y|)", self.dx / ymax),
            ("y-drift (dy / max|F + gamma y|)", self.dy / fmax),
            (
                "y-diffusion (dy^2 / sigma^2)",
                self.dy * self.dy / (2.0 * self.diff),
            ),
        ];
        for (constraint, limit) in limits {
            if self.dt > limit * (1.0 + 1e-12) {
                return Err(KclError::Cfl {
                    constraint,
                    limit,
                    dt: self.dt,
                });
            }
        }
        Ok(())
    }

    fn positivity(&self, f: &mut GridDensity, tol: f64) -> Result<()> {
        let max = f.values.iter().fold(0.0f64, |m, v| m.max(*v));
        for (k, v) in f.values.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v < -tol * max {
                    return Err(KclError::NegativeDensity {
                        ix: k / self.ny,
                        iy: k % self.ny,
                        value: *v,
                    });
                }
                *v = 0.0;
            }
            if !v.is_finite() {
                return Err(KclError::NonFinite {
                    what: "grid density".into(),
                    location: format!("cell ({}, {})", k / self.ny, k % self.ny),
                });
            }
        }
        Ok(())
    }
}

/// Largest step meeting all three CFL constraints for any probability
/// density on `grid`, bounding the mean field by `max|V'| + sup|∂_x W|` over
/// the nodes.
pub fn stable_dt(grid: &GridSpec, spec: &PotentialSpec, gamma: f64, sigma: f64) -> Result<f64> {
    grid.validate()?;
    if !(sigma > 0.0) || !(gamma >= 0.0) {
        return Err(KclError::invalid(
            "sigma",
            "the grid solver needs sigma > 0 and gamma >= 0",
        ));
    }
    let xs = grid.x_nodes();
    let mut g = [0.0];
    let mut vmax = 0.0f64;
    let mut wmax = 0.0f64;
    for x in &xs {
        spec.confinement.gradient(&[*x], &mut g);
        vmax = vmax.max(g[0].abs());
        if !spec.interaction.is_zero() {
            for xp in &xs {
                spec.interaction.gradient_x(&[*x], &[*xp], &mut g);
                wmax = wmax.max(g[0].abs());
            }
        }
    }
    let ymax = grid.y_max.abs().max(grid.y_min.abs());
    let (dx, dy) = (grid.dx(), grid.dy());
    Ok((dx / ymax)
        .min(dy / (vmax + wmax + gamma * ymax))
        .min(dy * dy / (sigma * sigma)))
}

/// Strang splitting for the kinetic Fokker–Planck equation
/// `∂_t m + y ∂_x m = ∂_y((σ²/2) ∂_y m + (F[m](x) + γy) m)` on the grid of
/// `init`, with no-flux boundaries. The time step is `params.dt`.
pub fn vfp_solve(
    init: &GridDensity,
    spec: &PotentialSpec,
    params: &SimParams,
    t_end: f64,
    cfg: &VfpConfig,
) -> Result<VfpSolution> {
    if spec.dim != 1 {
        return Err(KclError::invalid("dim", "grid objects are one-dimensional"));
    }
    params.validate()?;
    if !(params.sigma > 0.0) {
        return Err(KclError::invalid(
            "sigma",
            "the grid solver needs sigma > 0",
        ));
    }
    if cfg.diagnostics_stride == 0 {
        return Err(KclError::invalid("diagnostics_stride", "must be positive"));
    }
    let g = init.grid;
    let mut f = GridDensity::new(g, init.values.clone())?;
    let t0 = 0.0;
    let steps = params.steps_between(t0, t_end)?;
    let beta = params.beta();
    let mut solver = Solver {
        gamma: params.gamma,
        diff: 0.5 * params.sigma * params.sigma,
        dt: params.dt,
        xs: g.x_nodes(),
        ys: g.y_nodes(),
        dx: g.dx(),
        dy: g.dy(),
        nx: g.n_x,
        ny: g.n_y,
        transposed: vec![0.0; g.cells()],
    };
    let diag = |f: &GridDensity, t: f64| -> Result<VfpDiagnostics> {
        let m = f.moments();
        let e = free_energy(f, spec, beta)?;
        Ok(VfpDiagnostics {
            t,
            mass: m.mass,
            free_energy: e,
            hw: cfg.minimizer_free_energy.map_or(f64::NAN, |e0| e - e0),
            x_mean: m.x_mean,
            x_var: m.x_var,
            y_var: m.y_var,
        })
    };
    let mut diagnostics = vec![diag(&f, t0)?];
    let mut marginals = Vec::new();
    if cfg.record_marginals {
        marginals.push((t0, f.x_marginal()));
    }
    for k in 1..=steps {
        let t = t0 + k as f64 * params.dt;
        solver.x_half_step(&mut f);
        let force = mean_field(spec, &solver.xs, &f.x_marginal(), solver.dx);
        solver.check_cfl(&force)?;
        solver.y_step(&mut f, &force);
        solver.x_half_step(&mut f);
        solver.positivity(&mut f, cfg.negativity_tol)?;
        if cfg.record_marginals {
            marginals.push((t, f.x_marginal()));
        }
        if k % cfg.diagnostics_stride as u64 == 0 || k == steps {
            let bm = f.boundary_mass();
            if bm > cfg.boundary_mass_tol {
                return Err(KclError::AssumptionViolated(format!(
                    "boundary mass {bm:e} exceeds {:e} at t = {t}; enlarge the domain",
                    cfg.boundary_mass_tol
                )));
            }
            diagnostics.push(diag(&f, t)?);
        }
    }
    Ok(VfpSolution {
        density: f,
        diagnostics,
        marginals,
    })
}

/// Mean field `∫ ∂_x W(x, x') ρ_t(x') dx'` from recorded `x`-marginals of a
/// grid solution, linear in time between records.
pub struct GridReference {
    nodes: Vec<f64>,
    dx: f64,
    times: Vec<f64>,
    marginals: Vec<Vec<f64>>,
    interaction: Arc<dyn Interaction>,
    kernel: Box<dyn ForceKernel>,
    weights: Vec<f64>,
    cursor: usize,
}

impl GridReference {
    pub fn new(
        solution: &VfpSolution,
        spec: &PotentialSpec,
        kernel: Box<dyn ForceKernel>,
    ) -> Result<Self> {
        if solution.marginals.len() < 2 {
            return Err(KclError::invalid(
                "marginals",
                "the solution must record marginals at two or more times",
            ));
        }
        if solution.marginals.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(KclError::invalid("marginals", "record times must increase"));
        }
        let g = solution.density.grid;
        Ok(GridReference {
            nodes: g.x_nodes(),
            dx: g.dx(),
            times: solution.marginals.iter().map(|m| m.0).collect(),
            marginals: solution.marginals.iter().map(|m| m.1.clone()).collect(),
            interaction: spec.interaction.clone(),
            kernel,
            weights: vec![0.0; g.n_x],
            cursor: 0,
        })
    }
}

impl MeanFieldReference for GridReference {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn field(&mut self, t: f64, targets: &[f64], grad: &mut [f64]) -> Result<()> {
        let last = self.times.len() - 1;
        if t < self.times[0] - 1e-9 || t > self.times[last] + 1e-9 {
            return Err(KclError::invalid(
                "t",
                format!(
                    "{t} is outside the recorded range [{}, {}]",
                    self.times[0], self.times[last]
                ),
            ));
        }
        if t < self.times[self.cursor] {
            self.cursor = 0;
        }
        while self.cursor + 1 < last && self.times[self.cursor + 1] <= t {
            self.cursor += 1;
        }
        let k = self.cursor.min(last - 1);
        let s = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        for (w, (a, b)) in self
            .weights
            .iter_mut()
            .zip(self.marginals[k].iter().zip(&self.marginals[k + 1]))
        {
            *w = ((1.0 - s) * a + s * b) * self.dx;
        }
        if self.interaction.is_zero() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return Ok(());
        }
        self.kernel.field(
            self.interaction.as_ref(),
            1,
            &self.nodes,
            Some(&self.weights),
            targets,
            grad,
            None,
        )
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::{Matrix2, Vector2};

    use super::*;
    use crate::particles::Pairwise;
    use crate::potential::{
        convex_benchmark, nonconvex_benchmark, DissipativityConstants, QuadraticConfinement,
        ZeroInteraction,
    };
    use crate::vlasov::{mean_field_entropy, stationary_fixed_point, FixedPointConfig, GridSpec};

    fn ou() -> PotentialSpec {
        let c = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap().constants;
        PotentialSpec::new(
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
        .unwrap()
    }

    fn stable(g: &GridSpec, spec: &PotentialSpec) -> SimParams {
        params(0.95 * stable_dt(g, spec, 1.0, 2f64.sqrt()).unwrap())
    }

    fn params(dt: f64) -> SimParams {
        SimParams {
            gamma: 1.0,
            sigma: 2f64.sqrt(),
            dt,
            ..SimParams::default()
        }
    }

    /// Mean and covariance ODEs of the kinetic OU process with unit
    /// stiffness, integrated by RK4.
    fn ou_moments(
        mean: Vector2<f64>,
        cov: Matrix2<f64>,
        gamma: f64,
        sigma: f64,
        t: f64,
    ) -> (Vector2<f64>, Matrix2<f64>) {
        let a = Matrix2::new(0.0, 1.0, -1.0, -gamma);
        let q = Matrix2::new(0.0, 0.0, 0.0, sigma * sigma);
        let h = 1e-4;
        let (mut m, mut c) = (mean, cov);
        let n = (t / h).round() as usize;
        let fm = |m: &Vector2<f64>| a * m;
        let fc = |c: &Matrix2<f64>| a * c + c * a.transpose() + q;
        for _ in 0..n {
            let (k1, l1) = (fm(&m), fc(&c));
            let (k2, l2) = (fm(&(m + k1 * (h / 2.0))), fc(&(c + l1 * (h / 2.0))));
            let (k3, l3) = (fm(&(m + k2 * (h / 2.0))), fc(&(c + l2 * (h / 2.0))));
            let (k4, l4) = (fm(&(m + k3 * h)), fc(&(c + l3 * h)));
            m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            c += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
        }
        (m, c)
    }

    #[test]
    fn ou_moments_track_the_linear_ode() {
        let g = GridSpec::symmetric(8.0, 200, 8.0, 200).unwrap();
        let init = GridDensity::gaussian(g, 1.0, 0.6, -0.5, 0.7).unwrap();
        let m0 = init.moments();
        let sol = vfp_solve(&init, &ou(), &stable(&g, &ou()), 1.0, &VfpConfig::default()).unwrap();
        let m = sol.density.moments();
        let (em, ec) = ou_moments(
            Vector2::new(m0.x_mean, m0.y_mean),
            Matrix2::new(m0.x_var, m0.xy_cov, m0.xy_cov, m0.y_var),
            1.0,
            2f64.sqrt(),
            1.0,
        );
        for (got, want) in [
            (m.x_mean, em[0]),
            (m.y_mean, em[1]),
            (m.x_var, ec[(0, 0)]),
            (m.y_var, ec[(1, 1)]),
            (m.xy_cov, ec[(0, 1)]),
        ] {
            assert!((got - want).abs() < 5e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn mass_and_positivity_are_kept_every_step() {
        let g = GridSpec::symmetric(7.0, 100, 7.0, 100).unwrap();
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let mut f = GridDensity::gaussian(g, 1.5, 0.5, 0.0, 1.0).unwrap();
        for _ in 0..40 {
            let p = stable(&g, &spec);
            f = vfp_solve(&f, &spec, &p, p.dt, &VfpConfig::default())
                .unwrap()
                .density;
            assert!((f.mass() - 1.0).abs() < 1e-12, "{}", f.mass());
            assert!(f.values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn fixed_point_is_nearly_stationary() {
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let change = |n: usize| {
            let g = GridSpec::symmetric(7.0, n, 7.0, n).unwrap();
            let fp = stationary_fixed_point(&spec, 1.0, &g, &FixedPointConfig::default()).unwrap();
            let sol = vfp_solve(
                &fp.density,
                &spec,
                &stable(&g, &spec),
                1.0,
                &VfpConfig::default(),
            )
            .unwrap();
            let peak = fp.density.values.iter().cloned().fold(0.0, f64::max);
            sol.density.sup_distance(&fp.density).unwrap() / peak
        };
        let (coarse, fine) = (change(70), change(140));
        assert!(fine < 5e-3, "{coarse} {fine}");
        assert!(fine < coarse / 2.0, "{coarse} {fine}");
    }

    #[test]
    fn stationary_error_converges_at_second_order() {
        let spec = ou();
        let err = |n: usize, dt: f64| {
            let g = GridSpec::symmetric(7.0, n, 7.0, n).unwrap();
            assert!(dt <= stable_dt(&g, &spec, 1.0, 2f64.sqrt()).unwrap());
            let exact = GridDensity::gaussian(g, 0.0, 1.0, 0.0, 1.0).unwrap();
            let sol = vfp_solve(&exact, &spec, &params(dt), 4.0, &VfpConfig::default()).unwrap();
            sol.density
                .values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                * g.dx()
                * g.dy()
        };
        let (e1, e2) = (err(70, 0.008), err(140, 0.002));
        assert!(e1 / e2 >= 3.0, "{e1} {e2} ratio {}", e1 / e2);
    }

    #[test]
    fn free_energy_dissipates_on_benchmarks() {
        for b in [convex_benchmark(), nonconvex_benchmark()] {
            let spec = b.spec(1.0, 2f64.sqrt()).unwrap();
            let g = GridSpec::symmetric(7.0, 100, 7.0, 100).unwrap();
            let fp = stationary_fixed_point(&spec, 1.0, &g, &FixedPointConfig::default()).unwrap();
            let e0 = free_energy(&fp.density, &spec, 1.0).unwrap();
            let init = GridDensity::gaussian(g, 1.0, 0.6, 0.5, 0.8).unwrap();
            let cfg = VfpConfig {
                diagnostics_stride: 5,
                minimizer_free_energy: Some(e0),
                ..VfpConfig::default()
            };
            let sol = vfp_solve(&init, &spec, &stable(&g, &spec), 3.0, &cfg).unwrap();
            let hw: Vec<f64> = sol.diagnostics.iter().map(|d| d.hw).collect();
            assert!(
                hw.windows(2).all(|w| w[1] <= w[0] + 1e-9),
                "{}: {hw:?}",
                b.name
            );
            assert!(hw.last().unwrap() < &(0.2 * hw[0]));
            let last = mean_field_entropy(&sol.density, &spec, 1.0, &fp.density).unwrap();
            assert!((last - hw.last().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cfl_violation_names_the_constraint() {
        let g = GridSpec::symmetric(6.0, 60, 6.0, 60).unwrap();
        let init = GridDensity::gaussian(g, 0.0, 1.0, 0.0, 1.0).unwrap();
        match vfp_solve(&init, &ou(), &params(0.5), 1.0, &VfpConfig::default()) {
            Err(KclError::Cfl { constraint, .. }) => assert!(constraint.starts_with("x-transport")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn boundary_monitor_aborts() {
        let g = GridSpec::symmetric(3.0, 40, 6.0, 60).unwrap();
        let init = GridDensity::gaussian(g, 1.5, 0.5, 2.0, 0.5).unwrap();
        let r = vfp_solve(&init, &ou(), &stable(&g, &ou()), 2.0, &VfpConfig::default());
        assert!(matches!(r, Err(KclError::AssumptionViolated(_))), "{r:?}");
    }

    #[test]
    fn grid_reference_interpolates_recorded_fields() {
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let g = GridSpec::symmetric(7.0, 80, 7.0, 80).unwrap();
        let init = GridDensity::gaussian(g, 0.5, 0.8, 0.0, 1.0).unwrap();
        let cfg = VfpConfig {
            record_marginals: true,
            ..VfpConfig::default()
        };
        let sol = vfp_solve(&init, &spec, &params(0.005), 0.1, &cfg).unwrap();
        assert_eq!(sol.marginals.len(), 21);
        let mut r = GridReference::new(&sol, &spec, Box::new(Pairwise)).unwrap();
        assert!((r.t_max() - 0.1).abs() < 1e-12);
        let targets = [-1.0, 0.0, 0.7];
        let mut grad = [0.0; 3];
        r.field(0.05, &targets, &mut grad).unwrap();
        // Direct sum over the recorded marginal at t = 0.05.
        let rho = &sol.marginals[10].1;
        for (x, gx) in targets.iter().zip(grad) {
            let mut s = 0.0;
            let mut tmp = [0.0];
            for (i, r) in rho.iter().enumerate() {
                spec.interaction.gradient_x(&[*x], &[g.x(i)], &mut tmp);
                s += tmp[0] * r * g.dx();
            }
            assert!((s - gx).abs() < 1e-12);
        }
        assert!(r.field(0.2, &targets, &mut grad).is_err());
    }
}
