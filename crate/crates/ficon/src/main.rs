use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ficon::run::{load_config, run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Forward,
    Control,
    Trajectory,
    Observability,
    Sweep,
    WeightsCheck,
}

/// Controllability experiments for a two-domain parabolic system with a point-mass interface.
#[derive(Debug, Parser)]
#[command(name = "ficon", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Forward => Command::Forward,
        Cmd::Control => Command::Control,
        Cmd::Trajectory => Command::Trajectory,
        Cmd::Observability => Command::Observability,
        Cmd::Sweep => Command::Sweep,
        Cmd::WeightsCheck => Command::WeightsCheck,
    };
    let result = load_config(&cli.config).and_then(|cfg| run(command, &cfg, &cli.out, cli.seed));
    match result {
        Ok(outcome) => {
            if let Some(e) = &outcome.failure {
                eprintln!("ficon {}: {e}", command.name());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("ficon {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
