use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stochwave::cli;

#[derive(Parser)]
#[command(
    name = "stochwave",
    version,
    about = "Spectral Monte Carlo laboratory for a stochastic wave equation \
             with spatially correlated noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and validate a config file without running it.
    Validate { config: PathBuf },
    /// List the available experiments.
    List,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => match cli::run(&config) {
            Ok(summary) => {
                println!(
                    "wrote {} files to {}",
                    summary.files.len(),
                    summary.output_dir.display()
                );
                for f in &summary.files {
                    println!("  {f}");
                }
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(err.exit_code() as u8)
            }
        },
        Command::Validate { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(err) => {
                    eprintln!("error: {err}");
                    return ExitCode::from(2);
                }
            };
            match cli::parse_config(&text).and_then(|c| cli::build_sim_config(&c).map(|s| (c, s))) {
                Ok((run_cfg, sim)) => {
                    println!(
                        "ok: {} experiment on a dim-{} grid (n = {}, nt = {}, T = {})",
                        run_cfg.experiment.name,
                        sim.grid.dim,
                        sim.grid.n,
                        sim.grid.nt,
                        sim.grid.horizon()
                    );
                    ExitCode::SUCCESS
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    ExitCode::from(err.exit_code() as u8)
                }
            }
        }
        Command::List => {
            for (name, description) in cli::list_experiments() {
                println!("{name:16} {description}");
            }
            ExitCode::SUCCESS
        }
    }
}
