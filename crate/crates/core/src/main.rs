use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fedlcbq::engine::ScheduleKind;
use fedlcbq::gen::MdpSpec;
use fedlcbq::harness::{cmd_run, cmd_schedule, cmd_sweep, cmd_verify, gen_data, gen_mdp, ExperimentConfig, RunInput};
use fedlcbq::{Error, Result};

#[derive(Parser)]
#[command(name = "fedlcbq", version, about = "Federated offline Q-learning on tabular MDPs")]
struct Cli {
    /// Master seed; replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MdpKind {
    Random,
    Chain,
    Split,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleFlavor {
    Periodic,
    Exponential,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an MDP file (from flags, or a generator spec via --config).
    GenMdp {
        #[arg(long, value_enum)]
        kind: Option<MdpKind>,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
    },
    /// Sample per-agent datasets for an experiment config.
    GenData,
    /// Run one experiment and write per-sync metrics.
    Run,
    /// Run the config's sweep axes over its seeds.
    Sweep,
    /// Check a run trace.
    Verify {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        mdp: Option<PathBuf>,
    },
    /// Print a sync schedule and check it.
    Schedule {
        #[arg(long, value_enum)]
        kind: ScheduleFlavor,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        tau1: Option<usize>,
        /// Upper bound on the first interval.
        #[arg(long)]
        tau1_bound: Option<f64>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<u64>,
}

fn read_config(path: Option<&Path>) -> Result<String> {
    let path = path.ok_or_else(|| Error::Validation("this command needs --config <json>".into()))?;
    Ok(std::fs::read_to_string(path)?)
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig> {
    Ok(serde_json::from_str(&read_config(cli.config.as_deref())?)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Returns the process exit code for a command that itself succeeded.
fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::GenMdp {
            kind,
            states,
            actions,
            horizon,
        } => {
            let spec = match kind {
                Some(MdpKind::Random) => MdpSpec::Random {
                    states: *states,
                    actions: *actions,
                    horizon: *horizon,
                    seed: cli.seed.unwrap_or(0),
                },
                Some(MdpKind::Chain) => MdpSpec::Chain {
                    states: *states,
                    horizon: *horizon,
                },
                Some(MdpKind::Split) => MdpSpec::Split {
                    states: *states,
                    actions: *actions,
                    horizon: *horizon,
                },
                None => serde_json::from_str(&read_config(cli.config.as_deref())?)?,
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("mdp.json"));
            print_json(&gen_mdp(&spec, &out)?)?;
            Ok(0)
        }
        Command::GenData => {
            let config = experiment(cli)?;
            let out = cli
                .out
                .clone()
                .or_else(|| config.out.clone())
                .ok_or_else(|| Error::Validation("no output directory: set \"out\" or pass --out".into()))?;
            print_json(&gen_data(&config, cli.seed, &out)?)?;
            Ok(0)
        }
        Command::Run => {
            let input = RunInput::from_json(&read_config(cli.config.as_deref())?)?;
            print_json(&cmd_run(&input, cli.seed, cli.out.as_deref())?)?;
            Ok(0)
        }
        Command::Sweep => {
            let config = experiment(cli)?;
            print_json(&cmd_sweep(&config, cli.seed, cli.out.as_deref())?)?;
            Ok(0)
        }
        Command::Verify { trace, mdp } => {
            let report = cmd_verify(trace, mdp.as_deref())?;
            if let Some(out) = &cli.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)?;
            Ok(if report.passed { 0 } else { 3 })
        }
        Command::Schedule {
            kind,
            episodes,
            horizon,
            tau,
            gamma,
            tau1,
            tau1_bound,
        } => {
            let kind = match kind {
                ScheduleFlavor::Periodic => ScheduleKind::Periodic {
                    tau: tau.ok_or_else(|| Error::Validation("periodic schedule needs --tau".into()))?,
                },
                ScheduleFlavor::Exponential => ScheduleKind::Exponential {
                    gamma: gamma.unwrap_or(2.0 / *horizon.max(&1) as f64),
                    tau1: *tau1,
                },
            };
            let summary = cmd_schedule(&kind, *episodes, *horizon, *tau1_bound)?;
            print_json(&summary)?;
            let ok = summary.within_round_bound.unwrap_or(true);
            Ok(if ok { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
                exit_code: e.exit_code(),
                offset: match &e {
                    Error::Parse { offset, .. } => Some(*offset),
                    _ => None,
                },
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
