use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regsched::experiment::{cmd_compare, cmd_prune, cmd_train, ExperimentConfig};
use regsched::report::cmd_report;
use regsched::Error;

#[derive(Parser)]
#[command(
    name = "regsched",
    about = "Train, compare, prune and report on additively regularized feed-forward models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (also settable via REGSCHED_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train models under the configured schedule mode, one run per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every configured mode over every seed and tabulate test errors.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Prune a trained checkpoint with the binary-mask search.
    Prune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Emit plot-ready CSV files from a directory of run artifacts.
    Report {
        run_dir: PathBuf,
    },
}

fn load_config(path: &PathBuf, cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Train { config } => {
            let config = load_config(config, cli)?;
            let summaries = cmd_train(&config)?;
            for s in &summaries {
                println!(
                    "{} {} seed {}: test MAE {:.6}, complexity {}",
                    s.dataset, s.mode, s.seed, s.test_mae, s.complexity
                );
            }
            println!("artifacts in {}", config.output_dir.display());
            Ok(())
        }
        Command::Compare { config } => {
            let config = load_config(config, cli)?;
            let table = cmd_compare(&config)?;
            print!("{}", std::fs::read_to_string(&table)?);
            println!("table written to {}", table.display());
            Ok(())
        }
        Command::Prune { config, checkpoint } => {
            let config = load_config(config, cli)?;
            let summaries = cmd_prune(&config, checkpoint)?;
            for s in &summaries {
                println!(
                    "{} seed {}: {} -> {} active parameters, test MAE {:.6} -> {:.6}",
                    s.dataset,
                    s.seed,
                    s.initial_complexity,
                    s.final_complexity,
                    s.test_mae_before,
                    s.test_mae_after
                );
            }
            Ok(())
        }
        Command::Report { run_dir } => {
            let written = cmd_report(run_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("REGSCHED_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: cannot set thread count: {e}");
        }
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
