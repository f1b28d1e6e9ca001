use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evgrid::pipeline::{run_stages, Stage};

/// EV charging impact studies on radial distribution feeders.
#[derive(Debug, Parser)]
#[command(name = "evgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check network schema, radiality and the station table.
    Validate(Common),
    /// Build the fleet demand profile and pick the peak.
    Profile(Common),
    /// Allocate the peak over stations and map them to buses.
    Assign(Common),
    /// Solve before/after snapshots and the time series.
    Run(Common),
    /// Compare before/after line flows and losses.
    Impact(Common),
    /// Write the styled GeoJSON map.
    Export(Common),
    /// All stages in order.
    Pipeline(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, stages): (&Common, &[Stage]) = match &cli.command {
        Command::Validate(c) => (c, &[Stage::Validate]),
        Command::Profile(c) => (c, &[Stage::Profile]),
        Command::Assign(c) => (c, &[Stage::Assign]),
        Command::Run(c) => (c, &[Stage::Run]),
        Command::Impact(c) => (c, &[Stage::Impact]),
        Command::Export(c) => (c, &[Stage::Export]),
        Command::Pipeline(c) => (c, &Stage::ALL),
    };
    match run_stages(&common.config, common.out.as_deref(), stages) {
        Ok(dir) => {
            log::info!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
