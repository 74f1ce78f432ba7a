//! Assumption checks and closed-form constants: dissipativity scans, `β₀`,
//! the Zegarlinski constants `b₀`, `c_L`, `γ₀`, log-Sobolev surrogates,
//! the hypocoercive rate `κ` and the quadratic envelope of `U`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DissipativityConstants, PotentialSpec};
use crate::error::{KclError, Result};
use crate::registry::Params;
use crate::rng::{tags, NoiseStream};

/// Box and resolution for grid/random scans over `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub lo: f64,
    pub hi: f64,
    /// Grid points per axis (used when `d = 1`).
    pub points: usize,
    /// Random tuples (used when `d > 1`).
    pub random_samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            lo: -5.0,
            hi: 5.0,
            points: 81,
            random_samples: 200_000,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

impl ScanConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.hi <= self.lo {
            return Err(KclError::invalid(
                "scan",
                format!("empty box [{}, {}]", self.lo, self.hi),
            ));
        }
        if self.points < 2 && self.random_samples == 0 {
            return Err(KclError::invalid("scan", "no scan points"));
        }
        Ok(())
    }

    fn axis(&self) -> Vec<f64> {
        let h = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + i as f64 * h).collect()
    }

    /// Calls `f` on every scanned tuple of `arity` points of `R^d`.
    fn for_each_tuple(
        &self,
        d: usize,
        arity: usize,
        mut f: impl FnMut(&[f64]) -> Result<()>,
    ) -> Result<()> {
        self.validate()?;
        if d == 1 && self.points >= 2 {
            let axis = self.axis();
            let n = axis.len();
            let mut idx = vec![0usize; arity];
            let mut buf = vec![0.0; arity];
            loop {
                for (b, &i) in buf.iter_mut().zip(&idx) {
                    *b = axis[i];
                }
                f(&buf)?;
                let mut k = 0;
                loop {
                    idx[k] += 1;
                    if idx[k] < n {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                    if k == arity {
                        return Ok(());
                    }
                }
            }
        }
        if self.random_samples == 0 {
            return Err(KclError::invalid(
                "scan",
                "random_samples must be positive when d > 1",
            ));
        }
        let stream = NoiseStream::new(self.seed, &[tags::SCAN, arity as u64]);
        let mut buf = vec![0.0; arity * d];
        for s in 0..self.random_samples {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = self.lo + (self.hi - self.lo) * stream.uniform(s as u64, k as u32, 0);
            }
            f(&buf)?;
        }
        Ok(())
    }
}

fn check_finite(what: &str, v: &[f64], at: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(KclError::NonFinite {
            what: what.to_string(),
            location: format!("{at:?}"),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Outcome of one scanned inequality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityCheck {
    /// `max (rhs − lhs)` over the scan; `≤ 0` means the inequality held.
    pub max_violation: f64,
    /// Tuple realizing the maximum, concatenated coordinates.
    pub worst: Vec<f64>,
    pub evaluated: usize,
    pub pass: bool,
}

impl InequalityCheck {
    fn new() -> Self {
        InequalityCheck {
            max_violation: f64::NEG_INFINITY,
            worst: Vec::new(),
            evaluated: 0,
            pass: true,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, at: &[f64], tol: f64) {
        let v = rhs - lhs;
        self.evaluated += 1;
        if v > self.max_violation {
            self.max_violation = v;
            self.worst = at.to_vec();
        }
        if v > tol * 1f64.max(lhs.abs()).max(rhs.abs()) {
            self.pass = false;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub confinement: InequalityCheck,
    pub interaction: InequalityCheck,
    pub pass: bool,
}

/// Scans the two dissipativity inequalities on the declared constants.
pub fn check_dissipativity(spec: &PotentialSpec, scan: &ScanConfig) -> Result<DissipativityReport> {
    let d = spec.dim;
    let c = &spec.constants;
    let indicator = |r: f64| if r <= c.r { 1.0 } else { 0.0 };
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut diff = vec![0.0; d];

    let mut conf = InequalityCheck::new();
    scan.for_each_tuple(d, 2, |t| {
        let (x, y) = t.split_at(d);
        spec.confinement.gradient(x, &mut gx);
        check_finite("confinement gradient", &gx, x)?;
        spec.confinement.gradient(y, &mut gy);
        check_finite("confinement gradient", &gy, y)?;
        for k in 0..d {
            diff[k] = x[k] - y[k];
            gx[k] -= gy[k];
        }
        let r = dist(x, y);
        let lhs = dot(&gx, &diff);
        let rhs = c.c_v * r * r - c.c_v_prime * r * indicator(r);
        conf.record(lhs, rhs, t, scan.tolerance);
        Ok(())
    })?;

    let mut inter = InequalityCheck::new();
    if spec.interaction.is_zero() && c.c_w <= 0.0 {
        inter.max_violation = 0.0;
        inter.evaluated = 0;
    } else {
        scan.for_each_tuple(d, 3, |t| {
            let (x, rest) = t.split_at(d);
            let (y, z) = rest.split_at(d);
            spec.interaction.gradient_x(x, z, &mut gx);
            check_finite("interaction gradient", &gx, t)?;
            spec.interaction.gradient_x(y, z, &mut gy);
            check_finite("interaction gradient", &gy, t)?;
            for k in 0..d {
                diff[k] = x[k] - y[k];
                gx[k] -= gy[k];
            }
            let r = dist(x, y);
            let lhs = dot(&gx, &diff);
            let rhs = c.c_w * r * r - c.c_w_prime * r * indicator(r);
            inter.record(lhs, rhs, t, scan.tolerance);
            Ok(())
        })?;
    }
    let pass = conf.pass && inter.pass;
    Ok(DissipativityReport {
        confinement: conf,
        interaction: inter,
        pass,
    })
}

/// `β₀ = 4 / ((c_V' + c_W') R) · ln((c_V + c_W) / ‖∇²_{x,x'}W‖_∞)`, with
/// `+∞` when `(c_V' + c_W') R = 0` or the mixed Hessian vanishes.
pub fn beta_zero(constants: &DissipativityConstants) -> Result<f64> {
    let s = constants.contraction();
    let h = constants.hess_w_mixed_sup;
    if s <= h {
        return Err(KclError::AssumptionViolated(format!(
            "c_V + c_W = {s} must exceed the mixed Hessian bound {h}"
        )));
    }
    let defect = constants.defect() * constants.r;
    if defect == 0.0 || h == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(4.0 / defect * (s / h).ln())
}

/// A supremum together with whether it is analytic or a scan estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Upper cutoff of the explicit quadrature; the tail is closed analytically.
    pub r_max: f64,
    /// Number of `r` samples (odd, for Simpson's rule).
    pub n_r: usize,
    /// Box and resolution for maximizing over `(x, z)` at fixed `r`.
    pub scan: ScanConfig,
    /// Pattern-search refinement passes around the best sample.
    pub refine_iters: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            r_max: 12.0,
            n_r: 241,
            scan: ScanConfig {
                lo: -6.0,
                hi: 6.0,
                points: 61,
                random_samples: 4000,
                seed: 1,
                tolerance: 1e-9,
            },
            refine_iters: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZegarlinskiReport {
    /// `(r, b₀(r))` with `b₀` estimated by maximization.
    pub b0_samples: Vec<(f64, f64)>,
    pub c_l_quadrature: f64,
    pub c_l_closed_form: f64,
    /// `β c_L ‖∇²_{x,x'}W‖_∞` from the quadrature value of `c_L`.
    pub gamma_zero: f64,
    pub gamma_zero_closed_form: f64,
    pub hess_w_mixed: SupEstimate,
    /// `b₀(r) ≤ −(c_V + c_W) r + (c_V' + c_W') 1{r ≤ R}` on every sample.
    pub b0_bound_holds: bool,
}

struct B0Objective<'a> {
    spec: &'a PotentialSpec,
    gx: Vec<f64>,
    gy: Vec<f64>,
    tmp: Vec<f64>,
    y: Vec<f64>,
}

impl<'a> B0Objective<'a> {
    fn new(spec: &'a PotentialSpec) -> Self {
        let d = spec.dim;
        B0Objective {
            spec,
            gx: vec![0.0; d],
            gy: vec![0.0; d],
            tmp: vec![0.0; d],
            y: vec![0.0; d],
        }
    }

    /// `−e · (∇_x U(x, z) − ∇_x U(y, z))` with `y = x − r e`.
    fn eval(&mut self, x: &[f64], z: &[f64], e: &[f64], r: f64) -> f64 {
        for k in 0..x.len() {
            self.y[k] = x[k] - r * e[k];
        }
        self.spec.confinement.gradient(x, &mut self.gx);
        self.spec.interaction.gradient_x(x, z, &mut self.tmp);
        for k in 0..x.len() {
            self.gx[k] += self.tmp[k];
        }
        self.spec.confinement.gradient(&self.y, &mut self.gy);
        self.spec.interaction.gradient_x(&self.y, z, &mut self.tmp);
        let mut s = 0.0;
        for (k, ek) in e.iter().enumerate().take(x.len()) {
            s -= ek * (self.gx[k] - self.gy[k] - self.tmp[k]);
        }
        s
    }
}

fn estimate_b0(spec: &PotentialSpec, r: f64, quad: &QuadratureConfig) -> Result<f64> {
    let d = spec.dim;
    let mut obj = B0Objective::new(spec);
    let mut best = f64::NEG_INFINITY;
    let mut best_pt: (Vec<f64>, Vec<f64>, Vec<f64>) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let scan = &quad.scan;
    scan.validate()?;
    if d == 1 {
        let h = (scan.hi - scan.lo) / (scan.points.max(2) - 1) as f64;
        for i in 0..scan.points.max(2) {
            let x = scan.lo + i as f64 * h;
            for j in 0..scan.points.max(2) {
                let z = scan.lo + j as f64 * h;
                for e in [1.0, -1.0] {
                    let v = obj.eval(&[x], &[z], &[e], r);
                    if v > best {
                        best = v;
                        best_pt = (vec![x], vec![z], vec![e]);
                    }
                }
            }
        }
    } else {
        let stream = NoiseStream::new(scan.seed, &[tags::SCAN, r.to_bits()]);
        let mut x = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut e = vec![0.0; d];
        for s in 0..scan.random_samples.max(1) {
            for k in 0..d {
                x[k] = scan.lo + (scan.hi - scan.lo) * stream.uniform(s as u64, k as u32, 0);
                z[k] = scan.lo + (scan.hi - scan.lo) * stream.uniform(s as u64, k as u32, 1);
                e[k] = stream.normal_pair(s as u64, k as u32, 2).0;
            }
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            e.iter_mut().for_each(|v| *v /= n);
            let v = obj.eval(&x, &z, &e, r);
            if v > best {
                best = v;
                best_pt = (x.clone(), z.clone(), e.clone());
            }
        }
    }
    if !best.is_finite() {
        return Err(KclError::NonFinite {
            what: "b0 objective".into(),
            location: format!("r = {r}"),
        });
    }
    // Pattern search in (x, z) with a fixed direction.
    let (mut x, mut z, e) = best_pt;
    let mut step = (scan.hi - scan.lo) / (scan.points.max(2) - 1) as f64;
    for _ in 0..quad.refine_iters {
        let mut improved = false;
        for k in 0..2 * d {
            for sgn in [1.0, -1.0] {
                let (mut xt, mut zt) = (x.clone(), z.clone());
                if k < d {
                    xt[k] += sgn * step;
                } else {
                    zt[k - d] += sgn * step;
                }
                let v = obj.eval(&xt, &zt, &e, r);
                if v > best {
                    best = v;
                    x = xt;
                    z = zt;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

fn mixed_hessian_sup(spec: &PotentialSpec, scan: &ScanConfig) -> Result<SupEstimate> {
    if let Some(v) = spec.interaction.mixed_hessian_sup() {
        return Ok(SupEstimate {
            value: v,
            exact: true,
        });
    }
    let d = spec.dim;
    let mut best = 0.0f64;
    scan.for_each_tuple(d, 2, |t| {
        let (x, y) = t.split_at(d);
        best = best.max(spec.interaction.mixed_hessian_norm(x, y));
        Ok(())
    })?;
    Ok(SupEstimate {
        value: best,
        exact: false,
    })
}

/// Closed-form upper bound `c_L ≤ exp(β (c_V' + c_W') R / 4) / (β (c_V + c_W))`.
fn c_l_closed_form(c: &DissipativityConstants) -> f64 {
    let s = c.contraction();
    if s <= 0.0 {
        return f64::INFINITY;
    }
    (c.beta * c.defect() * c.r / 4.0).exp() / (c.beta * s)
}

/// Estimates `b₀(r)` and evaluates `c_L` and `γ₀` for the potential `βU`.
pub fn zegarlinski_certificate(
    spec: &PotentialSpec,
    quad: &QuadratureConfig,
) -> Result<ZegarlinskiReport> {
    let c = &spec.constants;
    let beta = c.beta;
    if quad.n_r < 3 || quad.n_r.is_multiple_of(2) {
        return Err(KclError::invalid(
            "quadrature.n_r",
            "must be odd and at least 3",
        ));
    }
    if !(quad.r_max > 0.0) {
        return Err(KclError::invalid("quadrature.r_max", "must be positive"));
    }
    if quad.r_max < c.r {
        return Err(KclError::invalid(
            "quadrature.r_max",
            format!("must be at least R = {} to close the tail", c.r),
        ));
    }
    let s = c.contraction();
    if s <= 0.0 {
        return Err(KclError::AssumptionViolated(format!(
            "c_V + c_W = {s} must be positive for c_L to be finite"
        )));
    }

    let h = quad.r_max / (quad.n_r - 1) as f64;
    let mut b0_samples = Vec::with_capacity(quad.n_r);
    for k in 0..quad.n_r {
        // b₀ is defined for r > 0; the first node uses a tiny offset.
        let r = if k == 0 { 1e-6 * h } else { k as f64 * h };
        b0_samples.push((k as f64 * h, estimate_b0(spec, r, quad)?));
    }
    let last = b0_samples.last().unwrap().1;
    if last >= 0.0 {
        return Err(KclError::NoConvergence {
            what: format!(
                "c_L quadrature (b0 not negative at r_max = {}; c_L infinite within scan)",
                quad.r_max
            ),
            iterations: quad.n_r,
            residual: last,
            history: b0_samples.iter().map(|p| p.1).collect(),
        });
    }

    let tol = quad.scan.tolerance;
    let b0_bound_holds = b0_samples.iter().all(|&(r, b)| {
        let bound = -s * r + if r <= c.r { c.defect() } else { 0.0 };
        b <= bound + tol * (1.0 + bound.abs())
    });

    // Cumulative trapezoid for B(s) = ∫₀^s β b₀, then Simpson for the outer integral.
    let mut cum = vec![0.0; quad.n_r];
    for k in 1..quad.n_r {
        cum[k] = cum[k - 1] + 0.5 * h * beta * (b0_samples[k - 1].1 + b0_samples[k].1);
    }
    let integrand = |k: usize| (cum[k] / 4.0).exp() * (k as f64 * h);
    let mut simpson = integrand(0) + integrand(quad.n_r - 1);
    for k in 1..quad.n_r - 1 {
        simpson += if k % 2 == 1 { 4.0 } else { 2.0 } * integrand(k);
    }
    simpson *= h / 3.0;
    let tail = (cum[quad.n_r - 1] / 4.0).exp() / (beta * s);
    let c_l_quadrature = 0.25 * simpson + tail;
    let c_l_closed = c_l_closed_form(c);

    let hess = mixed_hessian_sup(spec, &quad.scan)?;
    Ok(ZegarlinskiReport {
        b0_samples,
        c_l_quadrature,
        c_l_closed_form: c_l_closed,
        gamma_zero: beta * c_l_quadrature * hess.value,
        gamma_zero_closed_form: beta * c_l_closed * hess.value,
        hess_w_mixed: hess,
        b0_bound_holds,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LsiReport {
    /// One-particle conditional constant `e^{2‖U₂‖_∞}/ρ` for `βU`.
    pub eta_x: f64,
    /// Phase-space constant `max(η_x, β)`.
    pub eta_full: f64,
}

/// Bakry–Émery plus Holley–Stroock surrogate for the log-Sobolev constant.
pub fn lsi_certificate(spec: &PotentialSpec, beta: f64) -> Result<LsiReport> {
    let split = spec
        .convex_split
        .ok_or_else(|| KclError::invalid("convex_split", "decomposition required"))?;
    if !(split.rho > 0.0) || !(split.u2_sup >= 0.0) || !split.u2_sup.is_finite() {
        return Err(KclError::invalid(
            "convex_split",
            "requires rho > 0 and a finite nonnegative u2_sup",
        ));
    }
    if !(beta > 0.0) {
        return Err(KclError::invalid("beta", "must be positive"));
    }
    let eta_x = (2.0 * beta * split.u2_sup).exp() / (beta * split.rho);
    Ok(LsiReport {
        eta_x,
        eta_full: eta_x.max(beta),
    })
}

/// `m = 2/σ² + γ² + (‖∇²V‖_∞ + 2‖∇²W‖_∞)²`.
pub fn hypocoercivity_m(gamma: f64, sigma: f64, hess_v_sup: f64, hess_w_sup: f64) -> f64 {
    let h = hess_v_sup + 2.0 * hess_w_sup;
    2.0 / (sigma * sigma) + gamma * gamma + h * h
}

/// Certified (and typically astronomically small) entropic decay rate
/// `κ = (ρ/η) (100/λ (N_c² + Λ²/λ + m))^{−20 N_c²}` with
/// `N_c = λ = Λ = ρ = 1`.
pub fn kappa_rate(
    eta: f64,
    gamma: f64,
    sigma: f64,
    hess_v_sup: f64,
    hess_w_sup: f64,
) -> Result<f64> {
    for (name, v) in [("eta", eta), ("gamma", gamma), ("sigma", sigma)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(KclError::invalid(name, "must be positive and finite"));
        }
    }
    for (name, v) in [("hess_v_sup", hess_v_sup), ("hess_w_sup", hess_w_sup)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(KclError::invalid(name, "must be nonnegative and finite"));
        }
    }
    let m = hypocoercivity_m(gamma, sigma, hess_v_sup, hess_w_sup);
    Ok((100.0 * (2.0 + m)).powf(-20.0) / eta)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub pass: bool,
    /// Scan point `(x, x')` that sets `α₃`.
    pub witness: Vec<f64>,
}

/// Quadratic bounds `α₁(|x|²+|x'|²) − α₃ ≤ U ≤ α₂(|x|²+|x'|²) + α₃` and
/// `|∇_x U| ≤ α₂(|x|+|x'|) + α₃`.
///
/// `α₁ = ρ/2` comes from the convex split and `α₂` from the Hessian bound of
/// `U`; `α₃` is the smallest value making all three hold on the scan.
pub fn quadratic_envelope(spec: &PotentialSpec, scan: &ScanConfig) -> Result<EnvelopeReport> {
    let split = spec
        .convex_split
        .ok_or_else(|| KclError::invalid("convex_split", "decomposition required"))?;
    let d = spec.dim;
    let alpha1 = 0.5 * split.rho;
    let alpha2 = spec.constants.hess_v_sup + spec.constants.hess_w_sup;
    let mut alpha3 = 0.0f64;
    let mut witness = vec![0.0; 2 * d];
    let mut g = vec![0.0; d];
    scan.for_each_tuple(d, 2, |t| {
        let (x, xp) = t.split_at(d);
        let q = dot(x, x) + dot(xp, xp);
        let u = spec.pair_value(x, xp);
        spec.pair_gradient_x(x, xp, &mut g);
        check_finite("pair potential", &[u], t)?;
        check_finite("pair gradient", &g, t)?;
        let gn = dot(&g, &g).sqrt();
        let lin = dot(x, x).sqrt() + dot(xp, xp).sqrt();
        let need = (alpha1 * q - u).max(u - alpha2 * q).max(gn - alpha2 * lin);
        if need > alpha3 {
            alpha3 = need;
            witness.copy_from_slice(t);
        }
        Ok(())
    })?;
    Ok(EnvelopeReport {
        alpha1,
        alpha2,
        alpha3,
        pass: alpha1 > 0.0 && alpha3.is_finite(),
        witness,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    pub gamma: f64,
    pub sigma: f64,
    pub scan: ScanConfig,
    pub quadrature: QuadratureConfig,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            gamma: 1.0,
            sigma: std::f64::consts::SQRT_2,
            scan: ScanConfig::default(),
            quadrature: QuadratureConfig::default(),
        }
    }
}

/// All computed constants with pass/fail flags and an echo of the input.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub confinement: String,
    pub confinement_params: Params,
    pub interaction: String,
    pub interaction_params: Params,
    pub dim: usize,
    pub constants: DissipativityConstants,
    pub gamma: f64,
    pub sigma: f64,
    pub beta: f64,
    #[serde(serialize_with = "crate::serde_ext::option::serialize")]
    pub beta_zero: Option<f64>,
    pub dissipativity: DissipativityReport,
    pub b0_samples: Vec<(f64, f64)>,
    pub c_l_quadrature: Option<f64>,
    #[serde(serialize_with = "crate::serde_ext::serialize")]
    pub c_l_closed_form: f64,
    pub gamma_zero: Option<f64>,
    pub gamma_zero_closed_form: Option<f64>,
    pub hess_w_mixed: Option<SupEstimate>,
    pub eta_x: Option<f64>,
    pub eta_full: Option<f64>,
    pub kappa: Option<f64>,
    pub ln_kappa: Option<f64>,
    pub envelope: Option<EnvelopeReport>,
    pub pass_flags: BTreeMap<String, bool>,
    pub errors: Vec<String>,
    pub pass: bool,
}

/// Runs every check and collects the constants into one report. Failures of
/// individual stages are recorded as flags, not returned as errors.
pub fn certify(spec: &PotentialSpec, opts: &CertifyOptions) -> Result<CertificateReport> {
    let spec = spec.clone().with_dynamics(opts.gamma, opts.sigma);
    let c = spec.constants;
    let mut flags = BTreeMap::new();
    let mut errors = Vec::new();

    let dissipativity = check_dissipativity(&spec, &opts.scan)?;
    flags.insert("dissipativity".to_string(), dissipativity.pass);
    flags.insert(
        "hessian_condition".to_string(),
        c.contraction() > c.hess_w_mixed_sup,
    );

    let beta_zero = match beta_zero(&c) {
        Ok(b) => Some(b),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    flags.insert(
        "beta_below_beta_zero".to_string(),
        beta_zero.is_some_and(|b0| c.beta < b0),
    );

    let zeg = match zegarlinski_certificate(&spec, &opts.quadrature) {
        Ok(z) => Some(z),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    if let Some(z) = &zeg {
        flags.insert(
            "c_l_below_closed_form".to_string(),
            z.c_l_quadrature <= z.c_l_closed_form * (1.0 + 1e-6),
        );
        flags.insert("b0_bound".to_string(), z.b0_bound_holds);
        flags.insert("gamma_zero_below_one".to_string(), z.gamma_zero < 1.0);
    } else {
        flags.insert("gamma_zero_below_one".to_string(), false);
    }

    let lsi = match lsi_certificate(&spec, c.beta) {
        Ok(l) => Some(l),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    flags.insert("lsi".to_string(), lsi.is_some());
    let kappa = match lsi {
        Some(l) => Some(kappa_rate(
            l.eta_full,
            opts.gamma,
            opts.sigma,
            c.hess_v_sup,
            c.hess_w_sup,
        )?),
        None => None,
    };
    let ln_kappa = lsi.map(|l| {
        let m = hypocoercivity_m(opts.gamma, opts.sigma, c.hess_v_sup, c.hess_w_sup);
        -20.0 * (100.0 * (2.0 + m)).ln() - l.eta_full.ln()
    });

    let envelope = match quadratic_envelope(&spec, &opts.scan) {
        Ok(e) => Some(e),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    flags.insert(
        "envelope".to_string(),
        envelope.as_ref().is_some_and(|e| e.pass),
    );

    let pass = flags.values().all(|&v| v);
    Ok(CertificateReport {
        confinement: spec.confinement.name().to_string(),
        confinement_params: spec.confinement.params(),
        interaction: spec.interaction.name().to_string(),
        interaction_params: spec.interaction.params(),
        dim: spec.dim,
        constants: c,
        gamma: opts.gamma,
        sigma: opts.sigma,
        beta: c.beta,
        beta_zero,
        dissipativity,
        b0_samples: zeg
            .as_ref()
            .map(|z| z.b0_samples.clone())
            .unwrap_or_default(),
        c_l_quadrature: zeg.as_ref().map(|z| z.c_l_quadrature),
        c_l_closed_form: c_l_closed_form(&c),
        gamma_zero: zeg.as_ref().map(|z| z.gamma_zero),
        gamma_zero_closed_form: zeg.as_ref().map(|z| z.gamma_zero_closed_form),
        hess_w_mixed: zeg.as_ref().map(|z| z.hess_w_mixed),
        eta_x: lsi.map(|l| l.eta_x),
        eta_full: lsi.map(|l| l.eta_full),
        kappa,
        ln_kappa,
        envelope,
        pass_flags: flags,
        errors,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::potential::{
        convex_benchmark, nonconvex_benchmark, BumpConfinement, Confinement, ConvexSplit,
        CurieWeiss, Interaction, QuadraticConfinement, ZeroInteraction,
    };

    fn constants(c_v: f64, c_w: f64) -> DissipativityConstants {
        DissipativityConstants {
            c_v,
            c_v_prime: 0.0,
            c_w,
            c_w_prime: 0.0,
            r: 0.0,
            hess_w_mixed_sup: 0.0,
            hess_v_sup: c_v,
            hess_w_sup: 0.0,
            beta: 1.0,
        }
    }

    fn spec(
        v: impl Confinement + 'static,
        w: impl Interaction + 'static,
        c: DissipativityConstants,
    ) -> PotentialSpec {
        PotentialSpec::new(Arc::new(v), Arc::new(w), 1, c).unwrap()
    }

    fn small_scan() -> ScanConfig {
        ScanConfig {
            points: 41,
            ..ScanConfig::default()
        }
    }

    #[test]
    fn quadratic_dissipativity_is_exact() {
        let s = spec(
            QuadraticConfinement { stiffness: 2.5 },
            ZeroInteraction,
            constants(2.5, 0.0),
        );
        let rep = check_dissipativity(&s, &small_scan()).unwrap();
        assert!(rep.pass);
        assert!(rep.confinement.max_violation.abs() < 1e-12);
        assert!(rep.interaction.pass);
    }

    #[test]
    fn bump_with_unit_contraction_fails_near_shoulder() {
        let bump = BumpConfinement {
            stiffness: 1.0,
            amplitude: 1.0,
            width: 1.0,
        };
        let s = spec(bump, ZeroInteraction, constants(1.0, 0.0));
        let rep = check_dissipativity(&s, &small_scan()).unwrap();
        assert!(!rep.pass);
        assert!(rep.confinement.max_violation > 0.0);
        // Oracle: the violation of a pair is ∫ (1 − V'') over the segment and
        // V'' = 1 − (1 − x²) e^{−x²/2} drops below 1 only on |x| < 1, so the
        // worst segment must cross the shoulder region.
        let (a, b) = (rep.confinement.worst[0], rep.confinement.worst[1]);
        assert!(a.min(b) < 1.0 && a.max(b) > -1.0, "worst pair {a}, {b}");
    }

    #[test]
    fn declared_benchmark_constants_verify() {
        for b in [convex_benchmark(), nonconvex_benchmark()] {
            let s = b.spec(1.0, 2f64.sqrt()).unwrap();
            let rep = check_dissipativity(&s, &small_scan()).unwrap();
            assert!(rep.pass, "{}: {rep:?}", b.name);
        }
    }

    #[test]
    fn empty_scan_is_an_error() {
        let s = convex_benchmark().spec(1.0, 1.0).unwrap();
        let scan = ScanConfig {
            lo: 1.0,
            hi: 1.0,
            ..ScanConfig::default()
        };
        assert!(check_dissipativity(&s, &scan).is_err());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let s = spec(
            QuadraticConfinement {
                stiffness: f64::INFINITY,
            },
            ZeroInteraction,
            constants(1.0, 0.0),
        );
        let err = check_dissipativity(&s, &small_scan()).unwrap_err();
        assert!(matches!(err, KclError::NonFinite { .. }), "{err}");
    }

    #[test]
    fn beta_zero_examples() {
        let mut c = constants(2.0, 0.0);
        c.hess_w_mixed_sup = 1.0;
        c.c_v_prime = 1.0;
        c.r = 2.0;
        let oracle = 2.0 * 2f64.ln();
        assert!((beta_zero(&c).unwrap() - oracle).abs() < 1e-14);

        c.r = 0.0;
        assert_eq!(beta_zero(&c).unwrap(), f64::INFINITY);

        c.r = 2.0;
        c.hess_w_mixed_sup = 2.0;
        assert!(matches!(
            beta_zero(&c),
            Err(KclError::AssumptionViolated(_))
        ));
    }

    #[test]
    fn zegarlinski_without_interaction() {
        let s = spec(
            QuadraticConfinement { stiffness: 1.0 },
            ZeroInteraction,
            constants(1.0, 0.0),
        );
        let z = zegarlinski_certificate(&s, &QuadratureConfig::default()).unwrap();
        assert!((z.c_l_closed_form - 1.0).abs() < 1e-15);
        assert_eq!(z.gamma_zero, 0.0);
        // b₀(r) = −r, so c_L = ¼ ∫ e^{−s²/8} s ds = 1 exactly.
        assert!(
            (z.c_l_quadrature - 1.0).abs() < 1e-6,
            "{}",
            z.c_l_quadrature
        );
    }

    #[test]
    fn curie_weiss_mixed_hessian_matches_evaluator() {
        let w = CurieWeiss { lambda: 0.25 };
        assert_eq!(w.mixed_hessian_sup(), Some(0.25));
        for &(x, y) in &[(0.0, 0.0), (1.0, -3.0), (7.0, 2.0)] {
            assert_eq!(w.mixed_hessian_norm(&[x], &[y]), 0.25);
        }
    }

    #[test]
    fn convex_benchmark_closed_form() {
        let s = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let z = zegarlinski_certificate(&s, &QuadratureConfig::default()).unwrap();
        let oracle = 1.0 / (1.0 * (1.0 + 0.25));
        assert!((z.c_l_closed_form - oracle).abs() < 1e-15);
        assert!(z.c_l_quadrature <= z.c_l_closed_form * (1.0 + 1e-6));
        assert!(z.b0_bound_holds);
        assert!((z.gamma_zero - 0.2).abs() < 1e-6);
        assert!(z.hess_w_mixed.exact);
    }

    #[test]
    fn nonconvex_benchmark_certifies() {
        let s = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let quad = QuadratureConfig {
            n_r: 121,
            ..QuadratureConfig::default()
        };
        let z = zegarlinski_certificate(&s, &quad).unwrap();
        assert!(z.b0_bound_holds);
        assert!(z.c_l_quadrature <= z.c_l_closed_form * (1.0 + 1e-6));
        assert!(z.gamma_zero < 1.0);
        assert!(z.gamma_zero_closed_form < 1.0);
    }

    #[test]
    fn divergent_quadrature_is_reported() {
        // Declared constants that claim contraction, but the scan cutoff sits
        // inside a region where b₀ is still positive.
        let bump = BumpConfinement {
            stiffness: 1.0,
            amplitude: 40.0,
            width: 1.0,
        };
        let s = spec(bump, ZeroInteraction, constants(0.1, 0.0));
        let quad = QuadratureConfig {
            r_max: 0.5,
            n_r: 11,
            ..QuadratureConfig::default()
        };
        let err = zegarlinski_certificate(&s, &quad).unwrap_err();
        assert!(
            err.to_string().contains("c_L infinite within scan"),
            "{err}"
        );
    }

    #[test]
    fn lsi_examples() {
        let base = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let s = base.clone().with_convex_split(ConvexSplit {
            rho: 1.0,
            u2_sup: 0.0,
        });
        assert_eq!(lsi_certificate(&s, 1.0).unwrap().eta_x, 1.0);

        let s = base.clone().with_convex_split(ConvexSplit {
            rho: 0.5,
            u2_sup: 1.0,
        });
        let oracle = 2.0 * 1f64.exp().powi(2);
        assert!((lsi_certificate(&s, 1.0).unwrap().eta_x - oracle).abs() < 1e-12);

        let s = base.clone().with_convex_split(ConvexSplit {
            rho: 1.0,
            u2_sup: 0.0,
        });
        let r = lsi_certificate(&s, 3.0).unwrap();
        assert_eq!(r.eta_full, r.eta_x.max(3.0));

        let mut s = base;
        s.convex_split = None;
        let err = lsi_certificate(&s, 1.0).unwrap_err();
        assert!(err.to_string().contains("decomposition required"));
    }

    #[test]
    fn lsi_eta_full_example() {
        let s = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let r = lsi_certificate(&s, 1.0).unwrap();
        assert_eq!(r.eta_x, 1.0);
        assert_eq!(r.eta_x.max(3.0), 3.0);
    }

    #[test]
    fn kappa_examples() {
        let sigma = 2f64.sqrt();
        assert!((hypocoercivity_m(1.0, sigma, 1.0, 0.0) - 3.0).abs() < 1e-15);
        let k = kappa_rate(1.0, 1.0, sigma, 1.0, 0.0).unwrap();
        // 500^-20 = 2^20 10^-60.
        let oracle: f64 = "1048576e-60".parse().unwrap();
        assert_eq!(k, oracle);
        let k2 = kappa_rate(2.0, 1.0, sigma, 1.0, 0.0).unwrap();
        assert!((k2 / k - 0.5).abs() < 1e-15);
        assert!(kappa_rate(1.0, 1.0, sigma, 1.5, 0.0).unwrap() < k);
        assert!(kappa_rate(0.0, 1.0, sigma, 1.0, 0.0).is_err());
        assert!(kappa_rate(1.0, 1.0, sigma, -1.0, 0.0).is_err());
    }

    #[test]
    fn envelope_of_pure_quadratic() {
        let s = spec(
            QuadraticConfinement { stiffness: 1.0 },
            ZeroInteraction,
            constants(1.0, 0.0),
        )
        .with_convex_split(ConvexSplit {
            rho: 1.0,
            u2_sup: 0.0,
        });
        let e = quadratic_envelope(&s, &small_scan()).unwrap();
        assert_eq!(e.alpha1, 0.5);
        // The gradient bound |x| ≤ α₂(|x| + |x'|) needs α₂ = 1; ½ only
        // bounds the value.
        assert_eq!(e.alpha2, 1.0);
        assert_eq!(e.alpha3, 0.0);
        assert!(e.pass);
    }

    #[test]
    fn envelope_of_curie_weiss() {
        let s = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let e = quadratic_envelope(&s, &small_scan()).unwrap();
        assert!(e.pass);
        assert!(e.alpha1 <= 0.5);
        assert!(e.alpha3 < 1e-12, "{e:?}");
    }

    #[test]
    fn envelope_absorbs_bump() {
        let bump = BumpConfinement {
            stiffness: 1.0,
            amplitude: 1.0,
            width: 1.0,
        };
        let hv = bump.hessian_sup().unwrap();
        let mut c = constants(0.3, 0.0);
        c.hess_v_sup = hv;
        let s = spec(bump, ZeroInteraction, c).with_convex_split(ConvexSplit {
            rho: 1.0,
            u2_sup: 2.0,
        });
        for scan in [
            small_scan(),
            ScanConfig {
                lo: -12.0,
                hi: 12.0,
                points: 97,
                ..ScanConfig::default()
            },
        ] {
            let e = quadratic_envelope(&s, &scan).unwrap();
            assert!(e.pass);
            // U carries two bumps, so the lower bound needs α₃ = 2a at the origin.
            assert!((e.alpha3 - 2.0).abs() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn envelope_requires_split() {
        let s = spec(
            QuadraticConfinement { stiffness: 1.0 },
            ZeroInteraction,
            constants(1.0, 0.0),
        );
        assert!(quadratic_envelope(&s, &small_scan()).is_err());
    }

    #[test]
    fn certify_report_serializes_infinity() {
        let s = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let opts = CertifyOptions {
            scan: small_scan(),
            ..CertifyOptions::default()
        };
        let rep = certify(&s, &opts).unwrap();
        assert!(rep.pass, "{:?}", rep.pass_flags);
        assert_eq!(rep.beta_zero, Some(f64::INFINITY));
        assert_eq!(rep.eta_full, Some(rep.eta_x.unwrap().max(rep.beta)));
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["beta_zero"], "inf");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kappa_decreases_in_eta_and_hessians(
            eta in 0.1f64..10.0, d_eta in 0.01f64..5.0,
            hv in 0.0f64..5.0, hw in 0.0f64..5.0, dh in 0.01f64..3.0,
            gamma in 0.1f64..3.0, sigma in 0.3f64..3.0,
        ) {
            let k = kappa_rate(eta, gamma, sigma, hv, hw).unwrap();
            prop_assert!(kappa_rate(eta + d_eta, gamma, sigma, hv, hw).unwrap() < k);
            prop_assert!(kappa_rate(eta, gamma, sigma, hv + dh, hw).unwrap() < k);
            prop_assert!(kappa_rate(eta, gamma, sigma, hv, hw + dh).unwrap() < k);
        }

        #[test]
        fn convex_specs_have_infinite_beta_zero(c_v in 0.1f64..5.0, lambda in 0.0f64..2.0, beta in 0.1f64..4.0) {
            let mut c = constants(c_v, lambda);
            c.hess_w_mixed_sup = lambda;
            c.beta = beta;
            prop_assert_eq!(beta_zero(&c).unwrap(), f64::INFINITY);
            prop_assert!((c_l_closed_form(&c) - 1.0 / (beta * (c_v + lambda))).abs() < 1e-12);
        }
    }
}
