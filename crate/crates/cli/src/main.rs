use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rarpinn_cli::run::{load_config, run, Mode, RunOptions};
use rarpinn_cli::CliError;

#[derive(Parser)]
#[command(name = "rarpinn", version, about = "Residual-adaptive PINN experiments for coupled NLS solitons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Reproducibility mode. All runs are single-threaded; the flag is recorded.
    #[arg(long, global = true)]
    single_thread: bool,
    /// one-soliton | two-soliton-elastic | two-soliton-inelastic | three-soliton-ingest
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample the closed-form solution on the preset grid.
    Generate,
    /// Solve the forward problem.
    TrainForward,
    /// Identify equation coefficients from samples.
    TrainInverse,
    /// Compare a prediction file with a reference file.
    Evaluate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let mode = match cli.command {
        Command::Generate => Mode::Generate,
        Command::TrainForward => Mode::TrainForward,
        Command::TrainInverse => Mode::TrainInverse,
        Command::Evaluate => Mode::Evaluate,
    };
    let config = load_config(cli.preset.as_deref(), cli.config.as_deref(), cli.seed)?;
    run(&RunOptions {
        mode,
        config,
        config_path: cli.config.clone(),
        out: cli.out.clone(),
        single_thread: cli.single_thread,
    })
}
