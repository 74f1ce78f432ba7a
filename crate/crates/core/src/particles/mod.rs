//! The `N`-particle system `dX_i = Y_i dt`,
//! `dY_i = −γY_i dt − (1/N) Σ_j ∇_x U(X_i, X_j) dt + σ dB_i`: force kernels,
//! integrators, Gibbs sampling and couplings.

mod coupling;
mod gibbs;
mod integrators;
mod kernels;
mod linear;
mod sim;
mod state;

pub use coupling::{
    couple_parallel, couple_synchronous, EnsembleReference, MeanFieldReference, ReferenceFactory,
    PARALLEL_STATISTIC, SYNC_STATISTIC,
};
pub use gibbs::{sample_gibbs, GibbsSample, McmcConfig, McmcDiagnostics};
pub use integrators::{
    integrator_registry, Baoab, EulerMaruyama, ForceEval, Integrator, StepConstants,
};
pub use kernels::{
    interaction_energy, kernel_registry, mean_field_force, mean_field_force_with, Chebyshev,
    ForceKernel, Pairwise, Symmetrized,
};
pub use linear::{empirical_gaussian, Gaussian2, LinearGaussianModel};
pub use sim::{
    admissible_lyapunov_eps, lyapunov_observable, lyapunov_observable_with, observer_registry,
    run_simulator, simulate, step, write_records_csv, DecayCurve, LyapunovObserver, Moments,
    ObservationRecord, Observer, SimOutput, SimParams, Simulator, BLOWUP_THRESHOLD,
    OBSERVATION_CSV_HEADER,
};
pub use state::{GaussianInit, ParticleState};
