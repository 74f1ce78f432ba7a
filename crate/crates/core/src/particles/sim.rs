use std::fmt;
use std::io::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::integrators::{integrator_registry, Integrator, StepConstants};
use super::kernels::{interaction_energy, kernel_registry, total_field, ForceKernel};
use super::ParticleState;
use crate::error::{KclError, Result};
use crate::potential::{beta_from, PotentialSpec};
use crate::registry::{param_or, Params, Registry};
use crate::rng::{tags, NoiseStream};

/// Entries above this magnitude are treated as a blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

/// Dynamics parameters. `β = 2γ/σ²` is always derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub gamma: f64,
    pub sigma: f64,
    pub dt: f64,
    pub scheme: String,
    pub kernel: String,
    pub kernel_params: Params,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            gamma: 1.0,
            sigma: std::f64::consts::SQRT_2,
            dt: 0.01,
            scheme: "baoab".into(),
            kernel: "pairwise".into(),
            kernel_params: Params::new(),
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn beta(&self) -> f64 {
        beta_from(self.gamma, self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(KclError::invalid(
                "dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(KclError::invalid("gamma", "must be nonnegative"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(KclError::invalid("sigma", "must be nonnegative"));
        }
        if !integrator_registry().contains(&self.scheme) {
            return Err(KclError::UnknownStrategy {
                kind: "integrator",
                name: self.scheme.clone(),
                available: integrator_registry().names().join(", "),
            });
        }
        kernel_registry().create(&self.kernel, &self.kernel_params)?;
        Ok(())
    }

    pub fn constants(&self) -> StepConstants {
        StepConstants {
            gamma: self.gamma,
            sigma: self.sigma,
            dt: self.dt,
        }
    }

    pub fn build_kernel(&self) -> Result<Box<dyn ForceKernel>> {
        kernel_registry().create(&self.kernel, &self.kernel_params)
    }

    /// Number of steps of size `dt` covering `[t0, t_end]`.
    pub fn steps_between(&self, t0: f64, t_end: f64) -> Result<u64> {
        if t_end < t0 {
            return Err(KclError::invalid(
                "t_end",
                format!("{t_end} is before the state time {t0}"),
            ));
        }
        Ok(((t_end - t0) / self.dt - 1e-9).ceil().max(0.0) as u64)
    }
}

/// Steps one system; the force at the current positions is cached between
/// steps so each step costs a single force evaluation.
pub struct Simulator {
    spec: PotentialSpec,
    params: SimParams,
    integrator: Box<dyn Integrator>,
    kernel: Box<dyn ForceKernel>,
    noise: NoiseStream,
    force: Vec<f64>,
    noise_buf: Vec<f64>,
    step_index: u64,
    primed: bool,
}

impl fmt::Debug for Simulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulator")
            .field("params", &self.params)
            .field("step_index", &self.step_index)
            .finish()
    }
}

impl Simulator {
    /// `replica` selects an independent noise stream under the same seed.
    pub fn new(spec: &PotentialSpec, params: &SimParams, replica: u64) -> Result<Self> {
        params.validate()?;
        Ok(Simulator {
            spec: spec.clone(),
            params: params.clone(),
            integrator: integrator_registry().create(&params.scheme, &Params::new())?,
            kernel: params.build_kernel()?,
            noise: NoiseStream::new(params.seed, &[tags::DYNAMICS, replica]),
            force: Vec::new(),
            noise_buf: Vec::new(),
            step_index: 0,
            primed: false,
        })
    }

    pub fn with_noise(mut self, noise: NoiseStream) -> Self {
        self.noise = noise;
        self
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &dyn ForceKernel {
        self.kernel.as_ref()
    }

    pub fn noise(&self) -> &NoiseStream {
        &self.noise
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Sets the noise counter, e.g. to continue a run from a snapshot.
    pub fn set_step_index(&mut self, k: u64) {
        self.step_index = k;
    }

    /// Forgets the cached force (call after editing the state externally).
    pub fn invalidate(&mut self) {
        self.primed = false;
    }

    fn check_state(&self, state: &ParticleState) -> Result<()> {
        if state.dim != self.spec.dim {
            return Err(KclError::Dimension {
                expected: self.spec.dim,
                got: state.dim,
            });
        }
        Ok(())
    }

    /// Noise of the next step for all particles, row-major.
    pub fn next_noise(&mut self, n: usize, d: usize) -> &[f64] {
        self.noise_buf.resize(n * d, 0.0);
        self.noise
            .fill_matrix(self.step_index, d, &mut self.noise_buf);
        &self.noise_buf
    }

    /// One step with the simulator's own noise stream.
    pub fn step(&mut self, state: &mut ParticleState) -> Result<()> {
        let (n, d) = (state.n, state.dim);
        self.noise_buf.resize(n * d, 0.0);
        self.noise
            .fill_matrix(self.step_index, d, &mut self.noise_buf);
        let noise = std::mem::take(&mut self.noise_buf);
        let r = self.step_with_noise(state, &noise);
        self.noise_buf = noise;
        r
    }

    /// One step with externally supplied standard normals.
    pub fn step_with_noise(&mut self, state: &mut ParticleState, noise: &[f64]) -> Result<()> {
        self.check_state(state)?;
        if noise.len() != state.positions.len() {
            return Err(KclError::Dimension {
                expected: state.positions.len(),
                got: noise.len(),
            });
        }
        let spec = &self.spec;
        let kernel = self.kernel.as_ref();
        if !self.primed || self.force.len() != state.positions.len() {
            self.force.resize(state.positions.len(), 0.0);
            total_field(
                spec,
                kernel,
                &state.positions,
                None,
                &state.positions,
                &mut self.force,
                None,
            )?;
            self.primed = true;
        }
        let c = self.params.constants();
        let mut eval = |x: &[f64], f: &mut [f64]| total_field(spec, kernel, x, None, x, f, None);
        let r = self.integrator.step(
            &mut state.positions,
            &mut state.velocities,
            &mut self.force,
            &mut eval,
            noise,
            &c,
        );
        self.step_index += 1;
        state.time += c.dt;
        if let Err(e) = r {
            self.primed = false;
            return Err(blowup(state, self.step_index, e.to_string()));
        }
        check_blowup(state, self.step_index)
    }
}

pub(crate) fn blowup(state: &ParticleState, step: u64, detail: String) -> KclError {
    KclError::BlowUp {
        step,
        time: state.time,
        detail,
    }
}

pub(crate) fn check_blowup(state: &ParticleState, step: u64) -> Result<()> {
    let d = state.dim;
    for (name, arr) in [
        ("position", &state.positions),
        ("velocity", &state.velocities),
    ] {
        if let Some(i) = arr.iter().position(|v| !(v.abs() <= BLOWUP_THRESHOLD)) {
            let p = i / d;
            return Err(blowup(
                state,
                step,
                format!(
                    "{name} of particle {p} is {:?}; state: x = {:?}, y = {:?}",
                    &arr[p * d..(p + 1) * d],
                    state.position(p),
                    state.velocity(p)
                ),
            ));
        }
    }
    Ok(())
}

/// A single step from the state's current time, with the noise counter
/// derived from `time / dt`.
pub fn step(
    state: &ParticleState,
    params: &SimParams,
    spec: &PotentialSpec,
) -> Result<ParticleState> {
    let mut sim = Simulator::new(spec, params, 0)?;
    sim.set_step_index((state.time / params.dt).round() as u64);
    let mut out = state.clone();
    sim.step(&mut out)?;
    Ok(out)
}

/// One sample of a statistic at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub t: f64,
    pub statistic: String,
    pub value: f64,
    pub stderr: f64,
    pub n_replicas: usize,
}

pub const OBSERVATION_CSV_HEADER: &str = "t,statistic,value,stderr,n_replicas";

pub fn write_records_csv<W: Write>(mut w: W, records: &[ObservationRecord]) -> Result<()> {
    writeln!(w, "{OBSERVATION_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.t, r.statistic, r.value, r.stderr, r.n_replicas
        )?;
    }
    Ok(())
}

/// Read-only statistic of a state.
pub trait Observer: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    /// Returns `(statistic, value, stderr)` triples.
    fn observe(
        &self,
        state: &ParticleState,
        spec: &PotentialSpec,
        kernel: &dyn ForceKernel,
    ) -> Result<Vec<(String, f64, f64)>>;
}

fn mean_and_stderr(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    for v in vals {
        n += 1;
        s += v;
        s2 += v * v;
    }
    let nf = n as f64;
    let m = s / nf;
    let var = if n > 1 {
        ((s2 - nf * m * m) / (nf - 1.0)).max(0.0)
    } else {
        f64::NAN
    };
    (m, (var / nf).sqrt())
}

/// Per-particle moments averaged over particles, with particle-spread
/// standard errors: `x_mean, y_mean, x2, y2, xy` and `z2 = |x|² + |y|²`.
#[derive(Debug, Default)]
pub struct Moments;

impl Moments {
    pub fn compute(state: &ParticleState) -> Vec<(String, f64, f64)> {
        let d = state.dim;
        let (n, x, y) = (state.n, &state.positions, &state.velocities);
        let comp_mean = |a: &[f64]| {
            mean_and_stderr((0..n).map(|i| a[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64))
        };
        let sq = |a: &[f64], b: &[f64], i: usize| {
            (0..d).map(|k| a[i * d + k] * b[i * d + k]).sum::<f64>()
        };
        let out = [
            ("x_mean", comp_mean(x)),
            ("y_mean", comp_mean(y)),
            ("x2", mean_and_stderr((0..n).map(|i| sq(x, x, i)))),
            ("y2", mean_and_stderr((0..n).map(|i| sq(y, y, i)))),
            ("xy", mean_and_stderr((0..n).map(|i| sq(x, y, i)))),
            (
                "z2",
                mean_and_stderr((0..n).map(|i| sq(x, x, i) + sq(y, y, i))),
            ),
        ];
        out.into_iter()
            .map(|(k, (m, s))| (k.to_string(), m, s))
            .collect()
    }
}

impl Observer for Moments {
    fn name(&self) -> &'static str {
        "moments"
    }

    fn observe(
        &self,
        state: &ParticleState,
        _: &PotentialSpec,
        _: &dyn ForceKernel,
    ) -> Result<Vec<(String, f64, f64)>> {
        Ok(Moments::compute(state))
    }
}

/// `H̃/N = (U_N(x) + ½|y|² + ε x·y)/N`.
#[derive(Debug, Default)]
pub struct LyapunovObserver {
    pub eps: f64,
}

impl Observer for LyapunovObserver {
    fn name(&self) -> &'static str {
        "lyapunov"
    }

    fn observe(
        &self,
        state: &ParticleState,
        spec: &PotentialSpec,
        kernel: &dyn ForceKernel,
    ) -> Result<Vec<(String, f64, f64)>> {
        let v = lyapunov_observable_with(state, spec, self.eps, kernel)?;
        Ok(vec![("lyapunov".to_string(), v, f64::NAN)])
    }
}

pub fn observer_registry() -> &'static Registry<dyn Observer> {
    static REG: OnceLock<Registry<dyn Observer>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Observer> = Registry::new("observer");
        r.register("moments", &[], |_| Ok(Box::new(Moments)));
        r.register("lyapunov", &["eps"], |p| {
            Ok(Box::new(LyapunovObserver {
                eps: param_or(p, "eps", 0.0),
            }))
        });
        r
    })
}

/// Largest `ε` keeping `α₁|x|² + ½|y|² + ε x·y ≥ ½(α₁|x|² + ½|y|²)`.
pub fn admissible_lyapunov_eps(alpha1: f64) -> f64 {
    (alpha1 / 2.0).max(0.0).sqrt()
}

/// `(U_N(x) + ½|y|² + ε x·y) / N` by direct summation.
pub fn lyapunov_observable(state: &ParticleState, spec: &PotentialSpec, eps: f64) -> Result<f64> {
    lyapunov_observable_with(state, spec, eps, &super::kernels::Pairwise)
}

pub fn lyapunov_observable_with(
    state: &ParticleState,
    spec: &PotentialSpec,
    eps: f64,
    kernel: &dyn ForceKernel,
) -> Result<f64> {
    if state.dim != spec.dim {
        return Err(KclError::Dimension {
            expected: spec.dim,
            got: state.dim,
        });
    }
    let mut g = vec![0.0; state.positions.len()];
    let u = interaction_energy(&state.positions, spec, kernel, &mut g)?;
    let kin: f64 = state.velocities.iter().map(|v| 0.5 * v * v).sum();
    let cross: f64 = state
        .positions
        .iter()
        .zip(&state.velocities)
        .map(|(x, y)| x * y)
        .sum();
    Ok((u + kin + eps * cross) / state.n as f64)
}

/// Output of [`simulate`].
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub state: ParticleState,
    pub records: Vec<ObservationRecord>,
}

/// Steps `state` to `t_end`, sampling observers every `stride` steps
/// (starting with the initial state).
pub fn simulate(
    state: &ParticleState,
    params: &SimParams,
    spec: &PotentialSpec,
    t_end: f64,
    observers: &[Box<dyn Observer>],
    stride: usize,
) -> Result<SimOutput> {
    let mut sim = Simulator::new(spec, params, 0)?;
    sim.set_step_index((state.time / params.dt).round() as u64);
    run_simulator(&mut sim, state, t_end, observers, stride)
}

pub fn run_simulator(
    sim: &mut Simulator,
    state: &ParticleState,
    t_end: f64,
    observers: &[Box<dyn Observer>],
    stride: usize,
) -> Result<SimOutput> {
    if stride == 0 {
        return Err(KclError::invalid("stride", "must be positive"));
    }
    state.validate()?;
    let steps = sim.params().steps_between(state.time, t_end)?;
    let mut s = state.clone();
    let mut records = Vec::new();
    let sample =
        |s: &ParticleState, sim: &Simulator, records: &mut Vec<ObservationRecord>| -> Result<()> {
            for o in observers {
                for (statistic, value, stderr) in o.observe(s, sim.spec(), sim.kernel())? {
                    records.push(ObservationRecord {
                        t: s.time,
                        statistic,
                        value,
                        stderr,
                        n_replicas: 1,
                    });
                }
            }
            Ok(())
        };
    sample(&s, sim, &mut records)?;
    for k in 1..=steps {
        sim.step(&mut s)?;
        if k % stride as u64 == 0 {
            sample(&s, sim, &mut records)?;
        }
    }
    Ok(SimOutput { state: s, records })
}

/// Time series of a positive scalar statistic with replica standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub statistic: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n_replicas: usize,
}

impl DecayCurve {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() || self.times.len() != self.std_errors.len() {
            return Err(KclError::invalid(
                "curve",
                "times, values and std_errors differ in length",
            ));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KclError::invalid(
                "curve",
                "times must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// Averages per-replica series sampled at common times.
    pub fn from_replicas(statistic: &str, times: Vec<f64>, replicas: &[Vec<f64>]) -> Result<Self> {
        if replicas.is_empty() {
            return Err(KclError::invalid("n_replicas", "must be positive"));
        }
        let r = replicas.len();
        let mut values = Vec::with_capacity(times.len());
        let mut std_errors = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            let (m, se) = mean_and_stderr(replicas.iter().map(|s| s[k]));
            values.push(m);
            std_errors.push(if r > 1 { se } else { f64::NAN });
        }
        let c = DecayCurve {
            statistic: statistic.to_string(),
            times,
            values,
            std_errors,
            n_replicas: r,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn records(&self) -> Vec<ObservationRecord> {
        (0..self.times.len())
            .map(|k| ObservationRecord {
                t: self.times[k],
                statistic: self.statistic.clone(),
                value: self.values[k],
                stderr: self.std_errors[k],
                n_replicas: self.n_replicas,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_records_csv(w, &self.records())
    }

    /// Collects one statistic from observer records.
    pub fn from_records(statistic: &str, records: &[ObservationRecord]) -> Result<Self> {
        let rows: Vec<&ObservationRecord> = records
            .iter()
            .filter(|r| r.statistic == statistic)
            .collect();
        let c = DecayCurve {
            statistic: statistic.to_string(),
            times: rows.iter().map(|r| r.t).collect(),
            values: rows.iter().map(|r| r.value).collect(),
            std_errors: rows.iter().map(|r| r.stderr).collect(),
            n_replicas: rows.first().map_or(0, |r| r.n_replicas),
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::GaussianInit;
    use crate::potential::{
        convex_benchmark, nonconvex_benchmark, PotentialSpec, QuadraticConfinement, ZeroInteraction,
    };
    use std::sync::Arc;

    fn ou_spec() -> PotentialSpec {
        let c = convex_benchmark().spec(1.0, 1.0).unwrap().constants;
        PotentialSpec::new(
            Arc::new(QuadraticConfinement { stiffness: 1.0 }),
            Arc::new(ZeroInteraction),
            1,
            crate::potential::DissipativityConstants {
                c_w: 0.0,
                hess_w_mixed_sup: 0.0,
                hess_w_sup: 0.0,
                ..c
            },
        )
        .unwrap()
    }

    fn gaussian(n: usize, seed: u64) -> ParticleState {
        let init = GaussianInit {
            x_mean: 1.0,
            x_std: 0.5,
            y_mean: 0.0,
            y_std: 0.5,
        };
        ParticleState::sample_gaussian(n, 1, &init, &NoiseStream::new(seed, &[tags::INITIAL]))
            .unwrap()
    }

    #[test]
    fn zero_length_run_is_identity() {
        let spec = ou_spec();
        let s = gaussian(10, 1);
        let out = simulate(
            &s,
            &SimParams::default(),
            &spec,
            0.0,
            &[Box::new(Moments)],
            1,
        )
        .unwrap();
        assert_eq!(out.state, s);
        assert_eq!(out.records.len(), 6);
    }

    #[test]
    fn large_stride_samples_once() {
        let spec = ou_spec();
        let out = simulate(
            &gaussian(10, 1),
            &SimParams::default(),
            &spec,
            0.5,
            &[Box::new(Moments)],
            1000,
        )
        .unwrap();
        assert!(out.records.iter().all(|r| r.t == 0.0));
        assert!((out.state.time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_dt_is_rejected() {
        let p = SimParams {
            dt: 0.0,
            ..SimParams::default()
        };
        let err = Simulator::new(&ou_spec(), &p, 0).unwrap_err();
        assert!(err.to_string().contains("dt"));
    }

    #[test]
    fn ou_moments_follow_covariance_ode() {
        // Oracle: for dX = Y, dY = −X − γY + σ dB the moments obey
        // m' = A m and S' = A S + S Aᵀ + diag(0, σ²), integrated by RK4.
        let spec = ou_spec();
        let params = SimParams::default();
        let n = 20_000;
        let out = simulate(
            &gaussian(n, 3),
            &params,
            &spec,
            2.0,
            &[Box::new(Moments)],
            50,
        )
        .unwrap();
        let (g, s2) = (params.gamma, params.sigma * params.sigma);
        let rhs = |z: [f64; 5]| {
            let [mx, my, sxx, sxy, syy] = z;
            [
                my,
                -mx - g * my,
                2.0 * sxy,
                syy - sxx - g * sxy,
                -2.0 * sxy - 2.0 * g * syy + s2,
            ]
        };
        let mut z = [1.0, 0.0, 0.25, 0.0, 0.25];
        let h = 1e-3;
        let mut t = 0.0;
        let mut checked = 0;
        for r in out
            .records
            .iter()
            .filter(|r| r.statistic == "x2" || r.statistic == "y2" || r.statistic == "x_mean")
        {
            while t < r.t - 1e-12 {
                let k1 = rhs(z);
                let add = |a: [f64; 5], b: [f64; 5], c: f64| {
                    let mut o = a;
                    for i in 0..5 {
                        o[i] += c * b[i];
                    }
                    o
                };
                let k2 = rhs(add(z, k1, h / 2.0));
                let k3 = rhs(add(z, k2, h / 2.0));
                let k4 = rhs(add(z, k3, h));
                for i in 0..5 {
                    z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                t += h;
            }
            let exact = match r.statistic.as_str() {
                "x_mean" => z[0],
                "x2" => z[2] + z[0] * z[0],
                _ => z[4] + z[1] * z[1],
            };
            // MC error plus the O(dt²) weak error of BAOAB.
            assert!(
                (r.value - exact).abs() < 4.0 * r.stderr + 2e-3,
                "{r:?} vs {exact}"
            );
            checked += 1;
        }
        assert!(checked >= 12);
    }

    #[test]
    fn determinism_across_worker_counts() {
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let run = |threads: usize, kernel: &str| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let p = SimParams {
                    kernel: kernel.into(),
                    seed: 5,
                    ..SimParams::default()
                };
                simulate(&gaussian(3000, 2), &p, &spec, 0.2, &[], 1)
                    .unwrap()
                    .state
            })
        };
        for kernel in ["pairwise", "chebyshev"] {
            let (a, b) = (run(1, kernel), run(4, kernel));
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.positions), bits(&b.positions));
            assert_eq!(bits(&a.velocities), bits(&b.velocities));
        }
    }

    #[test]
    fn exchangeability_with_permuted_noise() {
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let n = 40;
        let s = gaussian(n, 7);
        let perm: Vec<usize> = (0..n).map(|k| (11 * k + 5) % n).collect();
        let p = SimParams::default();
        let mut noise = vec![0.0; n];
        NoiseStream::new(1, &[]).fill_matrix(0, 1, &mut noise);
        let pnoise: Vec<f64> = perm.iter().map(|&i| noise[i]).collect();
        let mut a = s.clone();
        Simulator::new(&spec, &p, 0)
            .unwrap()
            .step_with_noise(&mut a, &noise)
            .unwrap();
        let mut b = s.permuted(&perm);
        Simulator::new(&spec, &p, 0)
            .unwrap()
            .step_with_noise(&mut b, &pnoise)
            .unwrap();
        let a = a.permuted(&perm);
        for i in 0..n {
            assert!((a.positions[i] - b.positions[i]).abs() < 1e-13);
            assert!((a.velocities[i] - b.velocities[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn blowup_is_detected() {
        let spec = ou_spec();
        let p = SimParams {
            dt: 5.0,
            gamma: 0.0,
            scheme: "euler_maruyama".into(),
            ..SimParams::default()
        };
        let err = simulate(&gaussian(4, 1), &p, &spec, 500.0, &[], 1).unwrap_err();
        assert!(matches!(err, KclError::BlowUp { .. }), "{err}");
    }

    #[test]
    fn single_step_matches_simulator() {
        let spec = ou_spec();
        let p = SimParams::default();
        let s = gaussian(5, 1);
        let a = step(&s, &p, &spec).unwrap();
        let b = simulate(&s, &p, &spec, p.dt, &[], 1).unwrap().state;
        assert_eq!(a, b);
    }

    #[test]
    fn lyapunov_at_origin() {
        let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let s = ParticleState::zeros(7, 1);
        let v = lyapunov_observable(&s, &spec, 0.3).unwrap();
        let oracle = spec.confinement.value(&[0.0]) + 0.5 * spec.interaction.value(&[0.0], &[0.0]);
        assert!((v - oracle).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_with_zero_eps_is_energy() {
        let spec = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let s = ParticleState::new(2, 1, vec![1.0, -1.0], vec![0.5, 2.0]).unwrap();
        // U_N = 1/2 + 1/2 + (1/4)(0 + 0.5 + 0.5 + 0) = 1.25; kinetic = 2.125.
        let v = lyapunov_observable(&s, &spec, 0.0).unwrap();
        assert!((v - (1.25 + 2.125) / 2.0).abs() < 1e-15);
        let w = lyapunov_observable(&s, &spec, 0.1).unwrap();
        assert!((w - v - 0.1 * (0.5 - 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn decay_curve_csv() {
        let c =
            DecayCurve::from_replicas("dist", vec![0.0, 1.0], &[vec![1.0, 0.5], vec![3.0, 0.5]])
                .unwrap();
        assert_eq!(c.values, vec![2.0, 0.5]);
        assert_eq!(c.std_errors[1], 0.0);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,statistic,value,stderr,n_replicas\n0,dist,2,1,2\n"));
        assert!(DecayCurve::from_replicas("x", vec![1.0, 1.0], &[vec![1.0, 1.0]]).is_err());
    }
}
