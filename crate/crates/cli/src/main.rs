use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use labelfed::checks::{gradcheck_suite, oracle_suite, CheckResult};
use labelfed::experiment::{emit, load_data, run, ExperimentConfig};

/// Overrides `data_dir` from the config file.
const DATA_DIR_ENV: &str = "LABELFED_DATA_DIR";

#[derive(Parser)]
#[command(name = "labelfed", version, about = "Federated learning with private client label sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and seed of an experiment config.
    Run {
        config: PathBuf,
        /// Write results here instead of the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse a config and print the resolved settings.
    Validate { config: PathBuf },
    /// Restriction identity, fixed-input combination and missing-label checks.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        cfg.data_dir = Some(PathBuf::from(dir));
    }
    Ok(cfg)
}

fn report(results: &[CheckResult]) -> bool {
    for r in results {
        println!(
            "{} {}: {:.3e} (limit {:.1e}, {} cases)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.threshold,
            r.cases
        );
    }
    results.iter().all(|r| r.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load_config(&config)?;
            let dir = output.unwrap_or_else(|| cfg.output_dir.clone());
            let data = load_data(&cfg)?;
            log::info!(
                "{} sweep points x {} seeds, {} train / {} test samples",
                cfg.sweep().len(),
                cfg.seeds.len(),
                data.train.len(),
                data.test.len()
            );
            let out = run(&cfg, &data)?;
            emit(&out, cfg.dataset, &dir)?;
            print!("{}", out.table.aggregate_csv());
            let failed = out.failed();
            if failed > 0 {
                log::error!("{failed} of {} cells failed", out.cells.len());
            }
            log::info!("results written to {}", dir.display());
            Ok(failed == 0)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            println!("{} runs", cfg.sweep().len() * cfg.seeds.len());
            Ok(true)
        }
        Command::Oracle { seed } => Ok(report(&oracle_suite(seed)?)),
        Command::Gradcheck { seed } => Ok(report(&gradcheck_suite(seed)?)),
    }
}
