use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cnsprox_bench::config::{LoadedConfig, Overrides, Task};
use cnsprox_bench::experiment::run_experiment;
use cnsprox_bench::BenchError;

#[derive(Parser)]
#[command(name = "cnsprox", version, about = "Convolutional sparse coding and dictionary learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn dictionaries and record convergence and held-out coding quality.
    CdlTrain(Common),
    /// Sparse-code images against a dictionary.
    CscSolve(Common),
    /// Denoise corrupted images over a grid of sparsity weights.
    DenoiseEval(Common),
    /// Detect anomalous windows in multi-series data.
    AnomalyDetect(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Reproducible output: ordered reductions, no wall-clock values.
    #[arg(long)]
    deterministic: bool,
}

fn run(task: Task, args: Common) -> Result<PathBuf, BenchError> {
    let loaded = match &args.config {
        Some(p) => LoadedConfig::from_file(p)?,
        None => LoadedConfig::from_str("")?,
    };
    let ov = Overrides {
        out: args.out,
        seed: args.seed,
        workers: args.workers,
        deterministic: args.deterministic,
    };
    let cfg = loaded.finalize(task, &ov)?;
    Ok(run_experiment(&cfg)?.out_dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::CdlTrain(a) => (Task::Cdl, a),
        Command::CscSolve(a) => (Task::Csc, a),
        Command::DenoiseEval(a) => (Task::Denoise, a),
        Command::AnomalyDetect(a) => (Task::Anomaly, a),
    };
    let config = args.config.clone();
    match run(task, args) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            match (&e, config) {
                (BenchError::Config { .. }, Some(p)) => eprintln!("error: {}: {e}", p.display()),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
