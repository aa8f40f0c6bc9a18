//! Closed-system benchmark: the variational flow and phase-space sampling
//! against the dense reference on a two-emitter cavity–vibration model.
//!
//! Run with `cargo run --release --example closed_benchmark`.

use spinboson::config::{
    InitialSection, Method, ModelKind, ModelSection, NumericsSection, OutputSection, RunSpec,
};
use spinboson::runner;

fn spec(method: Method) -> RunSpec {
    RunSpec {
        method,
        model: ModelSection {
            kind: ModelKind::Htc,
            n_spins: 2,
            delta: 0.0,
            coupling: 0.1,
            nu: 1.0,
            lambda: 0.1,
            epsilon: Vec::new(),
            anharmonicity: 1.0,
            xi: 0.0,
            cavity_frequency: 0.0,
        },
        lindblad: Default::default(),
        initial: InitialSection::default(),
        numerics: NumericsSection {
            n_gaussians: 2,
            squeezing: false,
            dt: 5e-3,
            n_traj: 4000,
            seed: 7,
            fock_cutoffs: vec![8],
            ..Default::default()
        },
        output: OutputSection {
            t_final: 5.0,
            t_start: 0.0,
            n_points: 11,
            observables: vec!["sz".into(), "n_cav".into()],
            path: None,
            format: Default::default(),
        },
    }
}

fn main() -> spinboson::Result<()> {
    let oracle = runner::run(&spec(Method::OracleClosed))?;
    let ngs = runner::run(&spec(Method::Ngs))?;
    let twa = runner::run(&spec(Method::Twa))?;

    println!("two emitters, g = lambda = 0.1, all spins up, cavity alpha = 1");
    println!(
        "{:>6} {:>10} {:>10} {:>10}   {:>10} {:>10} {:>10}",
        "t", "sz exact", "sz ngs", "sz twa", "n_c exact", "n_c ngs", "n_c twa"
    );
    for (i, &t) in oracle.grid.iter().enumerate() {
        println!(
            "{:>6.2} {:>10.6} {:>10.6} {:>10.6}   {:>10.6} {:>10.6} {:>10.6}",
            t,
            oracle.mean[(i, 0)],
            ngs.mean[(i, 0)],
            twa.mean[(i, 0)],
            oracle.mean[(i, 1)],
            ngs.mean[(i, 1)],
            twa.mean[(i, 1)]
        );
    }

    let mut dev_ngs = 0.0f64;
    let mut dev_twa = 0.0f64;
    for i in 0..oracle.grid.len() {
        for c in 0..2 {
            dev_ngs = dev_ngs.max((ngs.mean[(i, c)] - oracle.mean[(i, c)]).abs());
            dev_twa = dev_twa.max((twa.mean[(i, c)] - oracle.mean[(i, c)]).abs());
        }
    }
    println!("\nmax |ngs - exact| = {dev_ngs:.2e}");
    println!("max |twa - exact| = {dev_twa:.2e}  ({} trajectories)", twa.n_traj);
    Ok(())
}
