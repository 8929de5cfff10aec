//! `ndtmc`: build NDT place descriptors from lidar scans, retrieve loop
//! closures and score them.

mod commands;
mod config;
mod error;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, Profile};
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ndtmc", version, about = "NDT-Map-Code place recognition toolkit")]
struct Cli {
    /// TOML config file, merged over the profile preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parameter preset; overrides `profile` in the config file.
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract descriptors from a scan directory or places file into a database.
    Extract(commands::extract::Args),
    /// Concatenate descriptor databases.
    Index(commands::index::Args),
    /// Match queries against a database and write a matches CSV.
    Query(commands::query::Args),
    /// Score a matches CSV against ground-truth poses.
    Evaluate(commands::evaluate::Args),
    /// Time descriptor extraction and queries.
    Bench(commands::bench::Args),
    /// Build NDT submap places from posed scans.
    Submap(commands::submap::Args),
    /// Write a synthetic scan sequence with a looping trajectory.
    Synth(commands::synth::Args),
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("--threads: {e}")))?;
    }
    let config = Config::load(cli.config.as_deref(), cli.profile)?;
    match cli.command {
        Command::Extract(args) => commands::extract::run(&config, args),
        Command::Index(args) => commands::index::run(args),
        Command::Query(args) => commands::query::run(&config, args),
        Command::Evaluate(args) => commands::evaluate::run(&config, args),
        Command::Bench(args) => commands::bench::run(&config, cli.seed, args),
        Command::Submap(args) => commands::submap::run(&config, args),
        Command::Synth(args) => commands::synth::run(cli.seed, args),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
