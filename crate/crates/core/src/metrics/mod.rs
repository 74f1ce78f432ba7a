//! Transport distances, divergence proxies, the empirical rate `a(N)` and
//! regression helpers.

mod assignment;
mod divergence;
mod gaussian;
mod rate;
mod w1;
mod w2;

pub use assignment::{solve_assignment, Assignment};
pub use divergence::{divergence_proxies, Divergences};
pub use gaussian::w2_gaussian;
pub use rate::{a_n, fit_exponential_rate, linear_fit, LineFit, RateFit, WindowPolicy};
pub use w1::w1_samples_vs_density;
pub use w2::{
    w2_1d, w2_empirical, w2_registry, ExactW2, SinkhornW2, SlicedW2, TransportEstimator, W2Method,
    EXACT_MAX_POINTS,
};
