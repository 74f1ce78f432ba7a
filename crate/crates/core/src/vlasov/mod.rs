//! One-dimensional grid objects for the nonlinear limit: the stationary
//! fixed point `m_∞`, the kinetic Fokker–Planck equation, the free energy
//! and the mean-field entropy.

mod energy;
mod fixed_point;
mod grid;
mod solver;

pub use energy::{free_energy, mean_field_entropy, HW_TOLERANCE};
pub use fixed_point::{maxwellian, stationary_fixed_point, FixedPoint, FixedPointConfig};
pub use grid::{GridDensity, GridMoments, GridSpec};
pub use solver::{
    stable_dt, vfp_solve, write_diagnostics_csv, GridReference, VfpConfig, VfpDiagnostics,
    VfpSolution, DIAGNOSTICS_CSV_HEADER,
};
