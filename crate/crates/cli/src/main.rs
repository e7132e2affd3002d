use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use intersect_cli::{cmd_compare, cmd_eval, cmd_export_pgm, cmd_train, Overrides};

#[derive(Parser)]
#[command(name = "intersect", version, about = "Train and evaluate left-turn agents at an unsignalized intersection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write weights, log and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides run.out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate trained weights greedily.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to <out>/weights.nnw.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Defaults to run.eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate evaluated runs by method and vehicle count.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Dump rendered frames of oracle-driven episodes as PGM files.
    ExportPgm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let s = cmd_train(&config, &Overrides { seed, out })?;
            let returns = s.log.returns();
            let tail = &returns[returns.len().saturating_sub(100)..];
            let mean = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
            println!(
                "trained {} episodes, mean return of last {} = {mean:.3}; outputs in {}",
                returns.len(),
                tail.len(),
                s.dir.display()
            );
        }
        Command::Eval {
            config,
            weights,
            episodes,
            seed,
            out,
        } => {
            let r = cmd_eval(weights.as_deref(), &config, episodes, &Overrides { seed, out })?;
            println!(
                "episodes {}: success {:.3}, collision {:.3}, timeout {:.3}, mean speed {:.2} m/s",
                r.episodes, r.success_rate, r.collision_rate, r.timeout_rate, r.mean_speed
            );
        }
        Command::Compare { runs, out } => {
            let rows = cmd_compare(&runs, &out)?;
            println!("{:<16} {:>8} {:>8} {:>9} {:>8}", "method", "vehicles", "success", "collision", "timeout");
            for r in rows {
                println!(
                    "{:<16} {:>8} {:>8.3} {:>9.3} {:>8.3}",
                    r.method, r.vehicles, r.success_rate, r.collision_rate, r.timeout_rate
                );
            }
        }
        Command::ExportPgm {
            config,
            episodes,
            seed,
            out,
        } => {
            let n = cmd_export_pgm(&config, &Overrides { seed, out }, episodes)?;
            println!("wrote {n} frames");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
