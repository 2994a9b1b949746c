//! `isk`: experiment runner.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};

use config::{ExperimentConfig, Overrides, Subcommand};
use error::CliError;
use output::{emit_plot_data, write_detail, write_summary, Recorder};

/// Environment variable that overrides the output directory of the config file.
const OUT_DIR_VAR: &str = "ISK_OUT_DIR";
const DEFAULT_OUT: &str = "isk-out";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Pressure,
    RsSolve,
    InterpolateCheck,
    Dobrushin,
    Fluctuations,
    Gamma,
    McValidate,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Pressure => Subcommand::Pressure,
            Command::RsSolve => Subcommand::RsSolve,
            Command::InterpolateCheck => Subcommand::InterpolateCheck,
            Command::Dobrushin => Subcommand::Dobrushin,
            Command::Fluctuations => Subcommand::Fluctuations,
            Command::Gamma => Subcommand::Gamma,
            Command::McValidate => Subcommand::McValidate,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "isk", version, about = "Exact, Monte Carlo and replica-symmetric experiments on the ISK model")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Configuration file (`key = value` lines in sections).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Output directory; beats the environment and the config file.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print the canonical effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Stamp result records with the current time.
    #[arg(long)]
    timestamp: bool,
}

fn execute(args: Args) -> Result<(), CliError> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let overrides = Overrides {
        seed: args.seed,
        workers: args.workers,
        out: args.out.or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from)),
    };
    let cfg = ExperimentConfig::load(args.command.into(), &text, &overrides)?;
    let hash = cfg.hash();
    if args.print_config {
        print!("# config_hash: {hash}\n{}", cfg.canonical_text());
        return Ok(());
    }
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let timestamp = args
        .timestamp
        .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    let recorder = Recorder::new(cfg.subcommand.name(), &hash, timestamp);
    let out = pool.install(|| commands::run(&cfg, recorder))?;
    write_summary(&dir, &out.recorder.summary(cfg.subcommand.name(), &cfg.canonical()))?;
    write_detail(&dir, &out.detail)?;
    for (kind, rows) in &out.plots {
        emit_plot_data(&dir, *kind, &hash, rows)?;
    }
    println!("{}: wrote results to {}", out.recorder.run_id, dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            // 2 is reserved for numerical non-convergence
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
