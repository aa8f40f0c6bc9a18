//! Direct use of the phase-space sampler: discrete spin-symbol moments at
//! t = 0 and the analytically solvable decay of a free lossy cavity.
//!
//! Run with `cargo run --release --example phase_space_sampling`.

use num_complex::Complex64 as C64;
use spinboson::twa::{run_htc_twa, HtcTwaParams, TwaObservable};

fn main() -> spinboson::Result<()> {
    // Spin symbols of an excited ensemble: <sz> = 1 exactly, and every
    // Cartesian component has unit second moment by construction.
    let n_traj = 10_000;
    let spins = run_htc_twa(
        &HtcTwaParams {
            n_spins: 1,
            dt: 1e-3,
            ..Default::default()
        },
        &[TwaObservable::TotalSz],
        &[0.0],
        n_traj,
        42,
    )?;
    println!(
        "excited spin symbol at t = 0: <sz> = {:.4} +/- {:.4} (exact 1)",
        2.0 * spins.mean[(0, 0)],
        2.0 * spins.stderr[(0, 0)]
    );

    // Decoupled lossy cavity in a rotating frame: the symbol mean follows
    // alpha exp(-i nu t - kappa t / 2) while the tracker gives <n>.
    let (nu, kappa, alpha) = (1.0, 0.4, C64::new(1.0, 0.0));
    let cavity = run_htc_twa(
        &HtcTwaParams {
            n_spins: 0,
            nu: 1.0,
            cavity_frequency: nu,
            cavity_decay: kappa,
            cavity_alpha: alpha,
            dt: 1e-3,
            ..Default::default()
        },
        &[
            TwaObservable::CavityRe,
            TwaObservable::CavityIm,
            TwaObservable::CavityNumber,
        ],
        &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        n_traj,
        43,
    )?;

    println!("\nfree cavity, nu = {nu}, kappa = {kappa}, alpha = {alpha}:");
    println!(
        "{:>5} {:>9} {:>9} {:>9} {:>9}   {:>8} {:>8}",
        "t", "Re<a>", "exact", "Im<a>", "exact", "<n>", "exact"
    );
    let mut worst = 0.0f64;
    for (i, &t) in cavity.grid.iter().enumerate() {
        let a = alpha * C64::new(0.0, -nu * t).exp() * (-0.5 * kappa * t).exp();
        let n = alpha.norm_sqr() * (-kappa * t).exp();
        worst = worst
            .max((cavity.mean[(i, 0)] - a.re).abs())
            .max((cavity.mean[(i, 1)] - a.im).abs())
            .max((cavity.mean[(i, 2)] - n).abs());
        println!(
            "{:>5.1} {:>9.5} {:>9.5} {:>9.5} {:>9.5}   {:>8.5} {:>8.5}",
            t,
            cavity.mean[(i, 0)],
            a.re,
            cavity.mean[(i, 1)],
            a.im,
            cavity.mean[(i, 2)],
            n
        );
    }
    println!("\nmax deviation from the analytic solution = {worst:.2e} ({n_traj} trajectories)");
    Ok(())
}
