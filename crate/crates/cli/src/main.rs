//! `fatigue`: batch driver for the mobility pipeline.

mod config;
mod error;
mod output;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "fatigue",
    version,
    about = "Social distancing index and fatigue analysis from device sightings"
)]
struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(short, long, env = "FATIGUE_CONFIG", global = true)]
    config: Option<PathBuf>,

    /// Maximum worker threads; 0 uses every core.
    #[arg(short, long, default_value_t = 0, global = true)]
    jobs: usize,

    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate sightings, zones, cases and ground truth from the scenario.
    Synth,
    /// Parse and clean raw sightings.
    Ingest,
    /// Segment cleaned sightings into trips.
    Trips,
    /// Infer each device's home and work zones.
    Activities,
    /// County device weights and state trip calibration.
    Weights,
    /// Daily mobility metrics per county, state and nation.
    Metrics,
    /// Benchmarks and the social distancing index.
    Sdi,
    /// Rate of change, inertia/fatigue dates and the before/after test.
    Phases,
    /// Join case counts with the index.
    Cases,
    /// Render SVG charts and their tables.
    Report,
    /// Run every stage in order, stopping at the first failure.
    All,
    /// Print the effective configuration with all defaults filled in.
    Config,
}

fn run_stage(cmd: Command, cfg: &Config) -> Result<(), CliError> {
    match cmd {
        Command::Synth => stages::synth(cfg),
        Command::Ingest => stages::ingest(cfg),
        Command::Trips => stages::trips(cfg),
        Command::Activities => stages::activities(cfg),
        Command::Weights => stages::weights(cfg),
        Command::Metrics => stages::metrics(cfg),
        Command::Sdi => stages::sdi(cfg),
        Command::Phases => stages::phases(cfg),
        Command::Cases => stages::cases(cfg),
        Command::Report => stages::report(cfg),
        Command::All => {
            let mut chain = Vec::new();
            if cfg.paths.scenario.is_some() {
                chain.push(Command::Synth);
            }
            chain.extend([
                Command::Ingest,
                Command::Trips,
                Command::Activities,
                Command::Weights,
                Command::Metrics,
                Command::Sdi,
                Command::Phases,
            ]);
            if cfg.paths.cases.is_some() {
                chain.push(Command::Cases);
            }
            chain.push(Command::Report);
            for c in chain {
                log::info!("running {c:?}");
                run_stage(c, cfg)?;
            }
            Ok(())
        }
        Command::Config => {
            let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Internal {
                stage: "config",
                message: e.to_string(),
            })?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Internal {
            stage: "startup",
            message: e.to_string(),
        })?;
    pool.install(|| run_stage(cli.command, &cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}
