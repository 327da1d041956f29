//! `flsim` -- federated-learning-over-wireless simulator CLI.
//!
//! Exit codes: 0 success, 2 usage error, 3 config error, 4 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flsim_core::config::{parse_config_file, resolve_dataset, SimConfig};
use flsim_core::control::Policy;
use flsim_core::error::Error;
use flsim_core::orchestrator::{replay, run_comparison, run_simulation};
use flsim_core::report::{emit_comparison, emit_report, partition_stats, ReportFormat};

const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(
    name = "flsim",
    version,
    about = "Deterministic federated-learning simulator over a wireless cell"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Directory holding the IDX files (overrides config and FLSIM_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its JSON report.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also persist the round memory as newline-delimited JSON.
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Benchmark selection policies across seeds and channel counts.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Policies to run (default: all four).
        #[arg(long, value_delimiter = ',')]
        policies: Vec<Policy>,
        /// Master seeds to run (default: the config's master_seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Channel counts to sweep (default: the config's num_channels).
        #[arg(long, value_delimiter = ',')]
        channels: Vec<usize>,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV destination; CSV goes to stdout when neither --out nor --csv is given.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print per-client partition sizes, entropies, and histograms as CSV.
    PartitionStats {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a stored report from its embedded config and verify it matches.
    Replay {
        /// Path to a JSON simulation report.
        #[arg(long)]
        report: PathBuf,
    },
    /// Re-emit a stored report in the requested format.
    Report {
        /// Path to a JSON simulation or comparison report.
        #[arg(long)]
        report: PathBuf,
        /// Output format: json or csv.
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig, Error> {
    let mut cfg = parse_config_file(&args.config)?;
    if let Some(dir) = &args.data_dir {
        cfg.data_dir = Some(dir.display().to_string());
    } else if cfg.data_dir.is_none() {
        if let Ok(dir) = std::env::var("FLSIM_DATA_DIR") {
            if !dir.is_empty() {
                cfg.data_dir = Some(dir);
            }
        }
    }
    Ok(cfg)
}

fn load_data(cfg: &SimConfig) -> Result<(flsim_core::Dataset, flsim_core::Dataset), u8> {
    resolve_dataset(cfg).map_err(|err| match err {
        err @ (Error::ConfigRange { .. } | Error::ConfigParse { .. }) => config_failure(err),
        err => runtime_failure(err),
    })
}

fn write_output(bytes: &[u8], out: Option<&Path>) -> std::io::Result<()> {
    use std::io::Write;
    match out {
        Some(path) => std::fs::write(path, bytes),
        None => std::io::stdout().write_all(bytes),
    }
}

fn config_failure(err: Error) -> u8 {
    eprintln!("flsim: {err}");
    EXIT_CONFIG
}

fn runtime_failure(err: Error) -> u8 {
    eprintln!("flsim: {err}");
    EXIT_RUNTIME
}

fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Simulate { config, out, memory } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(err) => return config_failure(err),
            };
            let (train, test) = match load_data(&cfg) {
                Ok(data) => data,
                Err(code) => return code,
            };
            let report = match run_simulation(&cfg, &train, &test) {
                Ok(report) => report,
                Err(err) => return runtime_failure(err),
            };
            if let Some(memory_path) = memory {
                let mut store = flsim_core::control::Memory::new();
                for record in &report.rounds {
                    if let Err(err) = store.append(record.clone()) {
                        return runtime_failure(err);
                    }
                }
                match store.to_ndjson() {
                    Ok(text) => {
                        if let Err(err) = std::fs::write(&memory_path, text) {
                            return runtime_failure(err.into());
                        }
                    }
                    Err(err) => return runtime_failure(err),
                }
            }
            match emit_report(&report, ReportFormat::Json) {
                Ok(bytes) => match write_output(&bytes, out.as_deref()) {
                    Ok(()) => 0,
                    Err(err) => runtime_failure(err.into()),
                },
                Err(err) => runtime_failure(err),
            }
        }
        Command::Compare { config, policies, seeds, channels, out, csv } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(err) => return config_failure(err),
            };
            let (train, test) = match load_data(&cfg) {
                Ok(data) => data,
                Err(code) => return code,
            };
            let policies = if policies.is_empty() { Policy::ALL.to_vec() } else { policies };
            let seeds = if seeds.is_empty() { vec![cfg.master_seed] } else { seeds };
            let channels =
                if channels.is_empty() { vec![cfg.wireless.num_channels] } else { channels };
            let report = match run_comparison(&cfg, &train, &test, &policies, &seeds, &channels) {
                Ok(report) => report,
                Err(err) => return runtime_failure(err),
            };
            if let Some(out_path) = &out {
                match emit_comparison(&report, ReportFormat::Json) {
                    Ok(bytes) => {
                        if let Err(err) = write_output(&bytes, Some(out_path)) {
                            return runtime_failure(err.into());
                        }
                    }
                    Err(err) => return runtime_failure(err),
                }
            }
            if csv.is_some() || out.is_none() {
                match emit_comparison(&report, ReportFormat::Csv) {
                    Ok(bytes) => {
                        if let Err(err) = write_output(&bytes, csv.as_deref()) {
                            return runtime_failure(err.into());
                        }
                    }
                    Err(err) => return runtime_failure(err),
                }
            }
            0
        }
        Command::PartitionStats { config, out } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(err) => return config_failure(err),
            };
            let (train, _) = match load_data(&cfg) {
                Ok(data) => data,
                Err(code) => return code,
            };
            match partition_stats(&cfg, &train) {
                Ok(stats) => match write_output(stats.as_bytes(), out.as_deref()) {
                    Ok(()) => 0,
                    Err(err) => runtime_failure(err.into()),
                },
                Err(err) => runtime_failure(err),
            }
        }
        Command::Replay { report } => match replay(&report) {
            Ok(fresh) => {
                println!(
                    "replay OK: {} rounds, final accuracy {}",
                    fresh.rounds.len(),
                    fresh.summary.final_accuracy
                );
                0
            }
            Err(err) => runtime_failure(err),
        },
        Command::Report { report, format, out } => {
            let format: ReportFormat = match format.parse() {
                Ok(format) => format,
                Err(err) => return config_failure(err),
            };
            let text = match std::fs::read_to_string(&report) {
                Ok(text) => text,
                Err(err) => return runtime_failure(err.into()),
            };
            // a stored report is either a single run or a comparison
            let bytes = if let Ok(run) =
                serde_json::from_str::<flsim_core::orchestrator::SimulationReport>(&text)
            {
                emit_report(&run, format)
            } else {
                match serde_json::from_str::<flsim_core::orchestrator::ComparisonReport>(&text) {
                    Ok(comparison) => emit_comparison(&comparison, format),
                    Err(err) => return runtime_failure(err.into()),
                }
            };
            match bytes {
                Ok(bytes) => match write_output(&bytes, out.as_deref()) {
                    Ok(()) => 0,
                    Err(err) => runtime_failure(err.into()),
                },
                Err(err) => runtime_failure(err),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli))
}
