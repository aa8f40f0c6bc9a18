//! Command-line front end: execute run configurations, inspect presets.

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinboson::config::parse_config;
use spinboson::{presets, runner, Error};

#[derive(Parser)]
#[command(
    name = "spinboson",
    version,
    about = "Closed and open spin-boson dynamics: variational Gaussian superpositions, \
             phase-space sampling, and dense references"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a TOML run configuration (a file path or a preset name).
    Run { config: String },
    /// Inspect the bundled run configurations.
    Presets {
        #[command(subcommand)]
        cmd: PresetCmd,
    },
}

#[derive(Subcommand)]
enum PresetCmd {
    /// List preset names with one-line summaries.
    List,
    /// Print a preset's TOML configuration.
    Show { name: String },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> spinboson::Result<()> {
    // Accepted for interface compatibility; execution is sequential.
    let _ = std::env::var("SPINBOSON_THREADS");
    match Cli::parse().cmd {
        Cmd::Run { config } => {
            let spec = if std::path::Path::new(&config).is_file() {
                parse_config(&std::fs::read_to_string(&config)?)?
            } else if let Some(p) = presets::get(&config) {
                p.spec
            } else {
                return Err(Error::Config(format!(
                    "no config file or preset named '{config}'"
                )));
            };
            let (bundle, text) = runner::run_to_string(&spec)?;
            match &spec.output.path {
                Some(path) => {
                    std::fs::write(path, &text)?;
                    eprintln!(
                        "wrote {} rows x {} observables to {path} in {:.2}s",
                        bundle.grid.len(),
                        bundle.columns.len(),
                        bundle.wall_time_s
                    );
                }
                None => emit_stdout(&text),
            }
            Ok(())
        }
        Cmd::Presets { cmd: PresetCmd::List } => {
            let list = presets::all();
            let width = list.iter().map(|p| p.name.len()).max().unwrap_or(0);
            let mut text = String::new();
            for p in list {
                text.push_str(&format!("{:width$}  {}\n", p.name, p.summary));
            }
            emit_stdout(&text);
            Ok(())
        }
        Cmd::Presets {
            cmd: PresetCmd::Show { name },
        } => match presets::get(&name) {
            Some(p) => {
                emit_stdout(&spinboson::config::to_toml(&p.spec));
                Ok(())
            }
            None => Err(Error::Config(format!("no preset named '{name}'"))),
        },
    }
}

/// Write to stdout, tolerating a closed pipe (e.g. `| head`).
fn emit_stdout(text: &str) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let _ = lock.write_all(text.as_bytes());
    let _ = lock.flush();
}
