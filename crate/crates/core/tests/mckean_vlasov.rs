use std::sync::Arc;

use kcl_core::particles::SimParams;
use kcl_core::potential::{
    nonconvex_benchmark, BumpConfinement, DissipativityConstants, PotentialSpec, ZeroInteraction,
};
use kcl_core::vlasov::{
    free_energy, stable_dt, stationary_fixed_point, vfp_solve, FixedPointConfig, GridDensity,
    GridSpec, VfpConfig,
};

fn bump_only() -> PotentialSpec {
    let base = nonconvex_benchmark()
        .spec(1.0, 2f64.sqrt())
        .unwrap()
        .constants;
    PotentialSpec::new(
        Arc::new(BumpConfinement {
            stiffness: 1.0,
            amplitude: 1.0,
            width: 1.0,
        }),
        Arc::new(ZeroInteraction),
        1,
        DissipativityConstants {
            c_w: 0.0,
            c_w_prime: 0.0,
            hess_w_mixed_sup: 0.0,
            hess_w_sup: 0.0,
            ..base
        },
    )
    .unwrap()
}

#[test]
fn without_interaction_the_fixed_point_is_the_gibbs_density() {
    let spec = bump_only();
    let grid = GridSpec::symmetric(8.0, 320, 8.0, 64).unwrap();
    let fp = stationary_fixed_point(&spec, 1.0, &grid, &FixedPointConfig::default()).unwrap();
    // Reference second moment of exp(−V) by fine midpoint quadrature.
    let v = |x: f64| x * x / 2.0 + (-x * x / 2.0).exp();
    let h = 1e-4;
    let (mut z, mut m2) = (0.0, 0.0);
    for i in 0..160_000 {
        let x = -8.0 + (i as f64 + 0.5) * h;
        let w = (-v(x)).exp() * h;
        z += w;
        m2 += x * x * w;
    }
    let m = fp.density.moments();
    assert!((m.x_var - m2 / z).abs() < 1e-3, "{} vs {}", m.x_var, m2 / z);
    assert!(m.x_mean.abs() < 1e-12);
    assert!((m.y_var - 1.0).abs() < 1e-3);
}

#[test]
fn pde_conserves_mass_and_dissipates_free_energy() {
    let spec = nonconvex_benchmark().spec(1.0, 2f64.sqrt()).unwrap();
    let grid = GridSpec::symmetric(7.0, 120, 7.0, 80).unwrap();
    let dt = 0.9 * stable_dt(&grid, &spec, 1.0, 2f64.sqrt()).unwrap();
    let params = SimParams {
        dt,
        ..SimParams::default()
    };
    let init = GridDensity::gaussian(grid, 1.0, 0.5, 0.0, 1.0).unwrap();
    let sol = vfp_solve(
        &init,
        &spec,
        &params,
        2.0,
        &VfpConfig {
            diagnostics_stride: 1,
            ..VfpConfig::default()
        },
    )
    .unwrap();
    let d = &sol.diagnostics;
    assert!(d.iter().all(|r| (r.mass - 1.0).abs() < 1e-10));
    for w in d.windows(2) {
        assert!(
            w[1].free_energy <= w[0].free_energy + 1e-9,
            "{} -> {}",
            w[0].free_energy,
            w[1].free_energy
        );
    }
    let fp = stationary_fixed_point(&spec, 1.0, &grid, &FixedPointConfig::default()).unwrap();
    let f_end = free_energy(&sol.density, &spec, 1.0).unwrap();
    let f_min = free_energy(&fp.density, &spec, 1.0).unwrap();
    assert!(f_end >= f_min - 1e-6);
}

#[test]
fn density_binary_round_trip() {
    let grid = GridSpec::symmetric(3.0, 17, 2.0, 9).unwrap();
    let d = GridDensity::gaussian(grid, 0.2, 0.7, -0.1, 0.4).unwrap();
    let mut buf = Vec::new();
    d.write_binary(&mut buf).unwrap();
    let back = GridDensity::read_binary(buf.as_slice()).unwrap();
    assert_eq!(back, d);
}
