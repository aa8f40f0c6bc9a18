//! What squeezing buys on a quartic oscillator: overlap with the dense
//! reference for four Gaussians with and without squeezing degrees of
//! freedom, from the same coherent initial state.
//!
//! Run with `cargo run --release --example squeezing_advantage`.

use spinboson::{presets, runner};

fn main() -> spinboson::Result<()> {
    let mut squeezed = presets::get("anharmonic-squeezed").unwrap().spec;
    let mut frozen = presets::get("anharmonic-coherent").unwrap().spec;
    for s in [&mut squeezed, &mut frozen] {
        s.output.t_final = 5.0;
        s.output.n_points = 11;
    }

    let a = runner::run(&squeezed)?;
    let b = runner::run(&frozen)?;
    let col = a.columns.iter().position(|c| c == "infidelity").unwrap();

    println!("quartic oscillator from alpha = 1, four Gaussians per run");
    println!("{:>6} {:>14} {:>14}", "t", "1-F squeezed", "1-F frozen");
    for (i, &t) in a.grid.iter().enumerate() {
        println!(
            "{:>6.2} {:>14.3e} {:>14.3e}",
            t,
            a.mean[(i, col)],
            b.mean[(i, col)]
        );
    }
    let last = a.grid.len() - 1;
    println!(
        "\nat t = {}: squeezing lowers the infidelity by a factor of {:.1}",
        a.grid[last],
        b.mean[(last, col)] / a.mean[(last, col)]
    );
    Ok(())
}
