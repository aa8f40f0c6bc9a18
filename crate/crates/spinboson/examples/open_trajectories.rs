//! Jump-unraveled open dynamics against the density-matrix reference:
//! a single emitter with strong vibrational dressing and fast cavity loss.
//!
//! Run with `cargo run --release --example open_trajectories`.

use spinboson::config::{
    InitialSection, LindbladSection, Method, ModelKind, ModelSection, NumericsSection,
    OutputSection, RunSpec,
};
use spinboson::runner;

fn spec(method: Method, n_traj: usize) -> RunSpec {
    RunSpec {
        method,
        model: ModelSection {
            kind: ModelKind::Htc,
            n_spins: 1,
            delta: 0.0,
            coupling: 0.1,
            nu: 1.0,
            lambda: 1.0,
            epsilon: Vec::new(),
            anharmonicity: 1.0,
            xi: 0.0,
            cavity_frequency: 0.0,
        },
        lindblad: LindbladSection {
            cavity_decay: 1.0,
            ..Default::default()
        },
        initial: InitialSection::default(),
        numerics: NumericsSection {
            n_gaussians: 4,
            squeezing: false,
            dt: 2e-3,
            n_traj,
            seed: 11,
            fock_cutoffs: vec![10, 8],
            ..Default::default()
        },
        output: OutputSection {
            t_final: 2.0,
            t_start: 0.0,
            n_points: 9,
            observables: vec!["n_cav".into(), "sz".into()],
            path: None,
            format: Default::default(),
        },
    }
}

fn main() -> spinboson::Result<()> {
    let n_traj = 32;
    let exact = runner::run(&spec(Method::OracleLindblad, 1))?;
    let traj = runner::run(&spec(Method::Ngs, n_traj))?;

    println!("one emitter, g = 0.1, lambda = 1, cavity decay 10g, {n_traj} trajectories");
    println!(
        "{:>6} {:>10} {:>10} {:>9}   {:>10} {:>10}",
        "t", "n_c exact", "n_c traj", "stderr", "sz exact", "sz traj"
    );
    let mut worst = 0.0f64;
    for (i, &t) in exact.grid.iter().enumerate() {
        worst = worst.max((traj.mean[(i, 0)] - exact.mean[(i, 0)]).abs());
        println!(
            "{:>6.2} {:>10.6} {:>10.6} {:>9.1e}   {:>10.6} {:>10.6}",
            t,
            exact.mean[(i, 0)],
            traj.mean[(i, 0)],
            traj.stderr[(i, 0)],
            exact.mean[(i, 1)],
            traj.mean[(i, 1)]
        );
    }
    println!("\nmax cavity-occupation deviation = {worst:.1e}");
    println!(
        "jumps per trajectory = {:.2}",
        traj.diagnostics.total_jumps as f64 / n_traj as f64
    );
    Ok(())
}
