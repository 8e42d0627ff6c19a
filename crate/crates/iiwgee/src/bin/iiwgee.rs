//! Command-line front end: simulation, fitting, Monte Carlo studies and the
//! bootstrap, all driven by TOML config files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iiwgee::cli::{cmd_bootstrap, cmd_fit, cmd_mc, cmd_simulate, CliFailure};

#[derive(Parser)]
#[command(name = "iiwgee", version, about = "Weighted GEEs for irregular longitudinal data with informative dropout")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker pool size (default: all cores). Results are identical for any
    /// thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated panel and write it as CSV plus a config sidecar.
    Simulate(CommonArgs),
    /// Fit the weighted GEE methods to an existing panel.
    Fit(CommonArgs),
    /// Run a Monte Carlo study over simulated panels.
    Mc(CommonArgs),
    /// Bootstrap one method on an existing panel.
    Bootstrap(CommonArgs),
}

fn dispatch(command: &Command) -> Result<(), CliFailure> {
    let (args, run): (&CommonArgs, fn(&std::path::Path, Option<&std::path::Path>) -> Result<(), CliFailure>) =
        match command {
            Command::Simulate(a) => (a, cmd_simulate),
            Command::Fit(a) => (a, cmd_fit),
            Command::Mc(a) => (a, cmd_mc),
            Command::Bootstrap(a) => (a, cmd_bootstrap),
        };
    let exec = || run(&args.config, args.output_dir.as_deref());
    match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliFailure {
                    code: 2,
                    message: format!("cannot build worker pool: {e}"),
                })?;
            pool.install(exec)
        }
        None => exec(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
