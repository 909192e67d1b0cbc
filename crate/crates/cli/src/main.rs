use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use unitab_cli::commands;
use unitab_cli::config::ExperimentConfig;
use unitab_cli::hash::config_hash;

/// Pre-train tabular in-context learners from a single table and analyze
/// their transfer.
#[derive(Parser)]
#[command(name = "unitab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train a model per the config's [pretrain] block.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's [eval] datasets.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Checkpoint path; defaults to the config's run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the config's [sweep] grid (task-budget, ablation or matrix).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Grid points to run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Emit analysis files (rank correlations, domain matrix, budget curve)
    /// from a results directory.
    Report {
        /// Directory holding results.csv (an output_dir of earlier runs).
        #[arg(long)]
        results_dir: PathBuf,
        /// Combine rows from different config hashes.
        #[arg(long)]
        allow_mixed: bool,
        /// Also analyze the bundled published reference tables.
        #[arg(long)]
        bundled: bool,
        /// Manifest for domain lookups (enables the domain matrix file).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Config hash whose sweep summary feeds the budget curve.
        #[arg(long)]
        sweep_hash: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in oracle and invariant checks.
    Selftest,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Pretrain {
            config,
            seed,
            output_dir,
        } => {
            let cfg = ExperimentConfig::load(&config, seed, output_dir)?;
            println!("config hash: {}", config_hash(&cfg)?);
            commands::cmd_pretrain(&cfg)?;
        }
        Command::Evaluate {
            config,
            seed,
            output_dir,
            checkpoint,
        } => {
            let cfg = ExperimentConfig::load(&config, seed, output_dir)?;
            let n = commands::cmd_evaluate(&cfg, checkpoint.as_deref())?;
            println!("appended {n} result rows to {}", cfg.output_dir.join("results.csv").display());
        }
        Command::Sweep {
            config,
            seed,
            output_dir,
            jobs,
        } => {
            let cfg = ExperimentConfig::load(&config, seed, output_dir)?;
            let gaps = commands::cmd_sweep(&cfg, jobs)?;
            if !gaps.is_empty() {
                anyhow::bail!(
                    "{} grid point(s) failed; see sweep/gaps.json for the machine-readable list",
                    gaps.len()
                );
            }
        }
        Command::Report {
            results_dir,
            allow_mixed,
            bundled,
            manifest,
            sweep_hash,
            seed,
        } => {
            commands::cmd_report(&results_dir, allow_mixed, bundled, seed)?;
            if let Some(m) = manifest {
                let manifest = unitab_core::manifest::Manifest::load(&m)?;
                commands::domain_report(&results_dir, &manifest)?;
            }
            if let Some(h) = sweep_hash {
                commands::budget_report(&results_dir, &h)?;
            }
        }
        Command::Selftest => commands::cmd_selftest()?,
    }
    Ok(())
}
