//! `focal`: run the simulation benchmark, fit the meta-learner to CSV data,
//! and compute confidence bands from a saved model.

mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use focal_core::simulate::Scenario;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "focal",
    version,
    about = "Functional CATE estimation with FOCaL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "focal-out")]
    out: PathBuf,

    /// Override the seed of the selected command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; falls back to FOCAL_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Restrict `simulate` to one scenario.
    #[arg(long, global = true, value_parser = ["1", "2", "3", "4", "all"])]
    scenario: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Monte Carlo study over the misspecification scenarios.
    Simulate,
    /// Fit to a covariate CSV and a curve CSV.
    Fit,
    /// Confidence band at one covariate row of a saved model.
    Bands,
    /// Rebuild summaries and plots from simulation rows.
    Report,
    /// Print the configuration schema.
    Schema,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("FOCAL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| {
                CliError::config(
                    format!("FOCAL_THREADS must be a positive integer, got `{v}`"),
                    vec![],
                )
            }),
        Err(_) => Ok(None),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Simulate => {
                if let Some(s) = &mut cfg.simulate {
                    s.base_seed = seed;
                }
            }
            Command::Fit => {
                if let Some(f) = &mut cfg.fit {
                    f.seed = seed;
                }
            }
            Command::Bands => {
                if let Some(b) = &mut cfg.bands {
                    b.seed = seed;
                }
            }
            Command::Report | Command::Schema => {}
        }
    }
    if let (Some(sel), Some(s)) = (&cli.scenario, &mut cfg.simulate) {
        if sel != "all" {
            let id: u8 = sel.parse().expect("validated by clap");
            s.scenarios = vec![Scenario::try_from(id).expect("validated by clap")];
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Schema = cli.command {
        print!("{}", config::SCHEMA);
        return Ok(());
    }
    if let Some(n) = threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}"), vec![]))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required", vec![]))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(&mut cfg, cli)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &cli.out),
        Command::Fit => commands::fit(&cfg, &cli.out),
        Command::Bands => commands::bands(&cfg, &cli.out),
        Command::Report => commands::report(&cfg, &cli.out),
        Command::Schema => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.to_json();
            eprintln!("{report}");
            if std::fs::create_dir_all(&cli.out).is_ok() {
                let _ = std::fs::write(cli.out.join("error.json"), format!("{report}\n"));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
