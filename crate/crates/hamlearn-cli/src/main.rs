use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamlearn_cli::{commands, config, CliError};

#[derive(Parser)]
#[command(
    name = "hamlearn",
    version,
    about = "Learn Pauli-string Hamiltonian coefficients from simulated time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a coefficient-labelled observation dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a multi-stage predictor on a dataset file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a predictor on a dataset's validation split, optionally
    /// under added observation noise.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Estimate a larger system pair-by-pair under XY-4 decoupling.
    Dd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
    },
    /// Error statistics and correlation scans for a trained predictor.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the training pipeline across a grid of sampling parameters.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let config_path = match &cli.command {
        Command::Generate { config }
        | Command::Train { config, .. }
        | Command::Evaluate { config, .. }
        | Command::Dd { config, .. }
        | Command::Analyze { config, .. }
        | Command::Sweep { config } => config.clone(),
    };
    let cfg = config::load(&config_path)?;
    if let Some(workers) = cfg.run.workers {
        if workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build_global()
                .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        }
    }
    match &cli.command {
        Command::Generate { .. } => commands::generate(&cfg),
        Command::Train { dataset, .. } => commands::train(&cfg, dataset),
        Command::Evaluate {
            predictor, dataset, ..
        } => commands::evaluate(&cfg, predictor, dataset),
        Command::Dd { predictor, .. } => commands::dd(&cfg, predictor),
        Command::Analyze {
            predictor, dataset, ..
        } => commands::analyze(&cfg, predictor, dataset),
        Command::Sweep { .. } => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    // Sample-level parallelism lives in rayon; keeping BLAS
    // single-threaded avoids nested pools and keeps kernels fast.
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(result) => {
            println!("{result}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
