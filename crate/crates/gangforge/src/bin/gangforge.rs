use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gangforge::runner;

/// Gang fraud injection-attack experiment pipeline.
#[derive(Parser)]
#[command(name = "gangforge", version)]
struct Cli {
    /// One of: gen-synth, train-detector, train-attack, attack, evaluate, ablate.
    command: String,
    /// Experiment config JSON; fields can be overridden via GANGFORGE_<FIELD>.
    #[arg(long)]
    config: PathBuf,
    /// Worker pool size for per-target-set attack and evaluation work.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Index into the config's seeds list for repeated runs.
    #[arg(long, default_value_t = 0)]
    seed_index: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match runner::run_cli(&cli.command, &cli.config, cli.jobs, cli.seed_index) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
