//! Synchronous and parallel couplings.

use rayon::prelude::*;

use super::integrators::{integrator_registry, Integrator};
use super::kernels::ForceKernel;
use super::sim::{blowup, check_blowup, DecayCurve, SimParams, Simulator};
use super::ParticleState;
use crate::error::{KclError, Result};
use crate::potential::PotentialSpec;
use crate::registry::Params;
use crate::rng::{tags, NoiseStream};

pub const SYNC_STATISTIC: &str = "sync_mean_sq_distance";
pub const PARALLEL_STATISTIC: &str = "parallel_mean_sq_distance";

fn check_pair(a: &ParticleState, b: &ParticleState) -> Result<()> {
    if a.n != b.n || a.dim != b.dim {
        return Err(KclError::Dimension {
            expected: a.n * a.dim,
            got: b.n * b.dim,
        });
    }
    Ok(())
}

fn sample_times(t0: f64, dt: f64, steps: u64, stride: usize) -> Vec<f64> {
    (0..=steps)
        .filter(|k| k % stride as u64 == 0)
        .map(|k| t0 + k as f64 * dt)
        .collect()
}

/// Steps every pair `(A, B)` with identical noise (one stream per replica)
/// and returns `E|Z_A − Z_B|²/N` sampled every `stride` steps.
pub fn couple_synchronous(
    pairs: &[(ParticleState, ParticleState)],
    params: &SimParams,
    spec: &PotentialSpec,
    t_end: f64,
    stride: usize,
) -> Result<DecayCurve> {
    if pairs.is_empty() || stride == 0 {
        return Err(KclError::invalid(
            "n_replicas",
            "need at least one replica and a positive stride",
        ));
    }
    params.validate()?;
    let t0 = pairs[0].0.time;
    for (a, b) in pairs {
        check_pair(a, b)?;
        check_pair(a, &pairs[0].0)?;
        if a.time != t0 || b.time != t0 {
            return Err(KclError::invalid(
                "state",
                "coupled states must start at a common time",
            ));
        }
    }
    let steps = params.steps_between(t0, t_end)?;
    let series: Vec<Vec<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(r, (a, b))| -> Result<Vec<f64>> {
            let mut sa = Simulator::new(spec, params, r as u64)?;
            let mut sb = Simulator::new(spec, params, r as u64)?;
            let (mut a, mut b) = (a.clone(), b.clone());
            let mut out = vec![a.mean_sq_distance(&b)?];
            let mut noise = vec![0.0; a.positions.len()];
            for k in 1..=steps {
                noise.copy_from_slice(sa.next_noise(a.n, a.dim));
                sa.step_with_noise(&mut a, &noise)?;
                sb.step_with_noise(&mut b, &noise)?;
                if k % stride as u64 == 0 {
                    out.push(a.mean_sq_distance(&b)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    DecayCurve::from_replicas(
        SYNC_STATISTIC,
        sample_times(t0, params.dt, steps, stride),
        &series,
    )
}

/// Provider of the nonlinear mean field `x ↦ ∫ ∇_x W(x, x') m_t(dx')`.
pub trait MeanFieldReference: Send {
    fn name(&self) -> &'static str;
    /// Last time at which the field is available.
    fn t_max(&self) -> f64;
    /// Writes the field at `targets` (rows of width `d`). Calls arrive with
    /// nondecreasing `t`.
    fn field(&mut self, t: f64, targets: &[f64], grad: &mut [f64]) -> Result<()>;
}

/// A large auxiliary interacting ensemble of `M` particles stepped in
/// lockstep with its own noise; its empirical measure stands in for `m_t`
/// (with an `O(1/M)` bias).
pub struct EnsembleReference {
    sim: Simulator,
    state: ParticleState,
    kernel: Box<dyn ForceKernel>,
    spec: PotentialSpec,
}

impl EnsembleReference {
    pub fn new(
        state: ParticleState,
        spec: &PotentialSpec,
        params: &SimParams,
        replica: u64,
    ) -> Result<Self> {
        let sim = Simulator::new(spec, params, replica)?
            .with_noise(NoiseStream::new(params.seed, &[tags::REFERENCE, replica]));
        Ok(EnsembleReference {
            sim,
            state,
            kernel: params.build_kernel()?,
            spec: spec.clone(),
        })
    }

    pub fn state(&self) -> &ParticleState {
        &self.state
    }
}

impl MeanFieldReference for EnsembleReference {
    fn name(&self) -> &'static str {
        "ensemble"
    }

    fn t_max(&self) -> f64 {
        f64::INFINITY
    }

    fn field(&mut self, t: f64, targets: &[f64], grad: &mut [f64]) -> Result<()> {
        let dt = self.sim.params().dt;
        while self.state.time < t - 0.5 * dt {
            self.sim.step(&mut self.state)?;
        }
        if self.spec.interaction.is_zero() {
            grad.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        self.kernel.field(
            self.spec.interaction.as_ref(),
            self.spec.dim,
            &self.state.positions,
            None,
            targets,
            grad,
            None,
        )
    }
}

/// Builds the reference used by replica `r`.
pub type ReferenceFactory<'a> = dyn Fn(u64) -> Result<Box<dyn MeanFieldReference>> + Sync + 'a;

/// Couples the interacting system started at each initial state with
/// nonlinear particles started at the same points and driven by the same
/// Brownian increments; returns `E|Z − Z̄|²/N` every `stride` steps.
pub fn couple_parallel(
    inits: &[ParticleState],
    reference: &ReferenceFactory<'_>,
    params: &SimParams,
    spec: &PotentialSpec,
    t_end: f64,
    stride: usize,
) -> Result<DecayCurve> {
    if inits.is_empty() || stride == 0 {
        return Err(KclError::invalid(
            "n_replicas",
            "need at least one replica and a positive stride",
        ));
    }
    params.validate()?;
    let t0 = inits[0].time;
    for s in inits {
        check_pair(s, &inits[0])?;
    }
    let steps = params.steps_between(t0, t_end)?;
    let series: Vec<Vec<f64>> = inits
        .par_iter()
        .enumerate()
        .map(|(r, init)| -> Result<Vec<f64>> {
            let mut refr = reference(r as u64)?;
            let t_last = t0 + steps as f64 * params.dt;
            if refr.t_max() < t_last - 1e-9 {
                return Err(KclError::invalid(
                    "t_end",
                    format!(
                        "reference `{}` ends at t = {} before t_end = {t_last}",
                        refr.name(),
                        refr.t_max()
                    ),
                ));
            }
            let mut sim = Simulator::new(spec, params, r as u64)?;
            let integrator: Box<dyn Integrator> =
                integrator_registry().create(&params.scheme, &Params::new())?;
            let c = params.constants();
            let mut z = init.clone();
            let mut zb = init.clone();
            let mut force = vec![0.0; zb.positions.len()];
            nonlinear_force(spec, refr.as_mut(), zb.time, &zb.positions, &mut force)?;
            let mut noise = vec![0.0; z.positions.len()];
            let mut out = vec![z.mean_sq_distance(&zb)?];
            for k in 1..=steps {
                noise.copy_from_slice(sim.next_noise(z.n, z.dim));
                sim.step_with_noise(&mut z, &noise)?;
                let t_next = zb.time + c.dt;
                let refr = refr.as_mut();
                let mut eval = |x: &[f64], f: &mut [f64]| nonlinear_force(spec, refr, t_next, x, f);
                integrator
                    .step(
                        &mut zb.positions,
                        &mut zb.velocities,
                        &mut force,
                        &mut eval,
                        &noise,
                        &c,
                    )
                    .map_err(|e| blowup(&zb, k, e.to_string()))?;
                zb.time = t_next;
                check_blowup(&zb, k)?;
                if k % stride as u64 == 0 {
                    out.push(z.mean_sq_distance(&zb)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    DecayCurve::from_replicas(
        PARALLEL_STATISTIC,
        sample_times(t0, params.dt, steps, stride),
        &series,
    )
}

fn nonlinear_force(
    spec: &PotentialSpec,
    reference: &mut dyn MeanFieldReference,
    t: f64,
    x: &[f64],
    f: &mut [f64],
) -> Result<()> {
    reference.field(t, x, f)?;
    let d = spec.dim;
    let mut g = vec![0.0; d];
    for (fi, xi) in f.chunks_mut(d).zip(x.chunks(d)) {
        spec.confinement.gradient(xi, &mut g);
        for k in 0..d {
            fi[k] += g[k];
        }
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(KclError::NonFinite {
            what: "nonlinear force".into(),
            location: format!("particle {}", i / d),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::metrics::fit_exponential_rate;
    use crate::metrics::WindowPolicy;
    use crate::particles::GaussianInit;
    use crate::potential::{
        convex_benchmark, DissipativityConstants, QuadraticConfinement, ZeroInteraction,
    };

    fn ou_spec() -> PotentialSpec {
        let c = convex_benchmark().spec(1.0, 1.0).unwrap().constants;
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

    fn gaussian(n: usize, seed: u64, mean: f64) -> ParticleState {
        let init = GaussianInit {
            x_mean: mean,
            x_std: 1.0,
            y_mean: 0.0,
            y_std: 1.0,
        };
        ParticleState::sample_gaussian(n, 1, &init, &NoiseStream::new(seed, &[tags::INITIAL]))
            .unwrap()
    }

    #[test]
    fn identical_states_stay_identical() {
        let spec = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let s = gaussian(50, 1, 0.0);
        let c = couple_synchronous(
            &[(s.clone(), s.clone()), (s.clone(), s)],
            &SimParams::default(),
            &spec,
            1.0,
            10,
        )
        .unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert_eq!(c.times.len(), 11);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = ou_spec();
        let r = couple_synchronous(
            &[(gaussian(5, 1, 0.0), gaussian(6, 1, 0.0))],
            &SimParams::default(),
            &spec,
            1.0,
            1,
        );
        assert!(matches!(r, Err(KclError::Dimension { .. })));
    }

    #[test]
    fn critically_damped_difference_decays_at_rate_two() {
        // δ obeys δx' = δy, δy' = −δx − 2δy: double eigenvalue −1, so |δ|²
        // decays like t² e^{−2t}. On [30, 40] the polynomial factor shifts the
        // log-slope by about 2/35, inside the 5% band. A large initial offset
        // keeps δ far above rounding level there.
        let spec = ou_spec();
        let params = SimParams {
            gamma: 2.0,
            sigma: 0.7,
            dt: 0.005,
            ..SimParams::default()
        };
        let pairs = vec![(gaussian(20, 1, 0.0), gaussian(20, 2, 1e6))];
        let c = couple_synchronous(&pairs, &params, &spec, 40.0, 200).unwrap();
        let policy = WindowPolicy {
            t_lo: Some(30.0),
            t_hi: None,
            drop_fraction: 0.0,
            noise_floor: 3.0,
        };
        let fit = fit_exponential_rate(&c, &policy).unwrap();
        assert!((fit.rate - 2.0).abs() < 0.1, "{fit:?}");
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn short_time_growth_is_bounded() {
        let spec = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let params = SimParams::default();
        let pairs = vec![(gaussian(100, 1, 0.0), gaussian(100, 2, 0.5))];
        let c = couple_synchronous(&pairs, &params, &spec, 1.0, 5).unwrap();
        let lip = spec.constants.hess_v_sup + spec.constants.hess_w_sup;
        let b = 2.0 * (1.0 + lip + params.gamma);
        for (t, v) in c.times.iter().zip(&c.values) {
            assert!(*v <= (b * t).exp() * c.values[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn parallel_coupling_starts_at_zero_and_grows() {
        let spec = convex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
        let params = SimParams::default();
        let inits: Vec<ParticleState> = (0..8).map(|r| gaussian(64, r, 1.0)).collect();
        let factory = |r: u64| -> Result<Box<dyn MeanFieldReference>> {
            let ens = gaussian(4096, 1000 + r, 1.0);
            Ok(Box::new(EnsembleReference::new(ens, &spec, &params, r)?))
        };
        let c = couple_parallel(&inits, &factory, &params, &spec, 0.5, 10).unwrap();
        assert_eq!(c.values[0], 0.0);
        for w in c.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    struct Short;
    impl MeanFieldReference for Short {
        fn name(&self) -> &'static str {
            "short"
        }
        fn t_max(&self) -> f64 {
            0.5
        }
        fn field(&mut self, _: f64, _: &[f64], g: &mut [f64]) -> Result<()> {
            g.iter_mut().for_each(|v| *v = 0.0);
            Ok(())
        }
    }

    #[test]
    fn short_reference_is_rejected() {
        let spec = ou_spec();
        let factory = |_: u64| -> Result<Box<dyn MeanFieldReference>> { Ok(Box::new(Short)) };
        let r = couple_parallel(
            &[gaussian(4, 1, 0.0)],
            &factory,
            &SimParams::default(),
            &spec,
            1.0,
            1,
        );
        assert!(r.unwrap_err().to_string().contains("t_end"));
    }

    #[test]
    fn without_interaction_parallel_coupling_is_exact() {
        let spec = ou_spec();
        let factory = |_: u64| -> Result<Box<dyn MeanFieldReference>> { Ok(Box::new(Short)) };
        let c = couple_parallel(
            &[gaussian(30, 1, 0.0)],
            &factory,
            &SimParams::default(),
            &spec,
            0.5,
            1,
        )
        .unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }
}
