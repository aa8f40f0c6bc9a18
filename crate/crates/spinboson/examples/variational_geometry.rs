//! Geometric structures on the variational manifold: metric and symplectic
//! form ranks, the compatibility defect of `J = -G omega` on the regular
//! subspace, and the analytic energy gradient checked against central
//! differences.
//!
//! Run with `cargo run --example variational_geometry`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use spinboson::energy::{expectation, expectation_gradient};
use spinboson::gaussian::{NgsState, Shape};
use spinboson::geometry::{build_geometry, GeometryOpts};
use spinboson::operator::{build_htc, HtcParams};

fn random_state(shape: Shape, seed: u64) -> NgsState {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut st = NgsState::zeros(shape).unwrap();
    for v in st.z.iter_mut() {
        *v = 0.4 * rng.gen_range(-1.0..1.0);
    }
    st
}

fn main() -> spinboson::Result<()> {
    let shape = Shape {
        n_spins: 1,
        n_modes: 2,
        n_gaussians: 2,
        squeezing: true,
    };
    let st = random_state(shape, 5);
    let m = shape.param_count();

    let geo = build_geometry(&st, &GeometryOpts::default())?;
    println!(
        "one spin, two modes, two squeezed Gaussians per branch: {m} real parameters"
    );
    println!("rank g = {} / {m}, rank omega = {} / {m}", geo.rank_g, geo.rank_omega);
    println!("defect of J^2 = -1 on the regular subspace: {:.2e}", geo.kahler_defect_ranged()?);
    println!("defect of J^2 = -1 over the full space:     {:.2e}", geo.kahler_defect_full());

    let h = build_htc(&HtcParams {
        n_spins: 1,
        detuning: 0.3,
        coupling: 0.2,
        holstein: 0.8,
        vibration_frequency: 1.0,
        disorder: vec![0.1],
    })?;
    let grad = expectation_gradient(&st, &h)?;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for mu in 0..m {
        let mut sp = st.clone();
        sp.z[mu] += eps;
        let mut sm = st.clone();
        sm.z[mu] -= eps;
        let fd = (expectation(&sp, &h)?.re - expectation(&sm, &h)?.re) / (2.0 * eps);
        worst = worst.max((fd - grad[mu]).abs() / (1.0 + fd.abs()));
    }
    println!("\nenergy gradient vs central differences over all {m} parameters:");
    println!("worst relative deviation = {worst:.2e}");
    Ok(())
}
