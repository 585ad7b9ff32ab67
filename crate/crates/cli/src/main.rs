//! `esr`: command-line pipeline for resonator-based ESR loss spectroscopy.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 analysis flagged
//! (non-convergence or warnings).

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use crate::config::{InputSpec, PipelineConfig, TemplateName};
use crate::report::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "esr", version, about = "Resonator-based ESR loss spectroscopy pipeline")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (default: config `out_dir`, else `esr-out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the notch resonator model to every trace in the input CSV files.
    FitS21 {
        /// Trace CSV files (overrides config `inputs`).
        inputs: Vec<PathBuf>,
    },
    /// Build the loss spectrum from fit records (or read a spectrum CSV) and decompose it.
    Spectrum {
        /// Fit-record JSON files from `fit-s21`, or one spectrum CSV.
        inputs: Vec<PathBuf>,
        /// Decomposition template (overrides config `template.name`).
        #[arg(long, value_name = "NAME")]
        template: Option<TemplateName>,
    },
    /// Fit the TLS law (qi column) or the saturation law (qb_inverse column) to power sweeps.
    Power {
        /// Power-sweep CSV files.
        inputs: Vec<PathBuf>,
    },
    /// Compare decomposition reports of treated samples.
    Compare {
        /// Decomposition reports as LABEL=PATH or PATH (first is the reference).
        inputs: Vec<String>,
    },
    /// Write synthetic traces, a spectrum and power sweeps from a built-in preset.
    Simulate {
        /// Preset name (overrides config `simulate.preset`).
        preset: Option<String>,
        /// Noise seed.
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
    },
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Flagged,
}

fn labelled(arg: &str) -> InputSpec {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            InputSpec { path: path.into(), label: Some(label.to_string()), power_report: None }
        }
        _ => InputSpec { path: arg.into(), label: None, power_report: None },
    }
}

fn run(cli: Cli) -> Result<Status> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let cli_inputs: Vec<InputSpec> = match &cli.command {
        Command::FitS21 { inputs } | Command::Spectrum { inputs, .. } | Command::Power { inputs } => inputs
            .iter()
            .map(|p| InputSpec { path: p.clone(), label: None, power_report: None })
            .collect(),
        Command::Compare { inputs } => inputs.iter().map(|a| labelled(a)).collect(),
        Command::Simulate { .. } => Vec::new(),
    };
    if !cli_inputs.is_empty() {
        config.inputs = cli_inputs;
    }
    match &cli.command {
        Command::Spectrum { template: Some(name), .. } => config.template.name = *name,
        Command::Simulate { preset: Some(name), .. } => config.simulate.preset = name.clone(),
        _ => {}
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.out_dir.take())
        .unwrap_or_else(|| PathBuf::from("esr-out"));
    config.out_dir = None;
    config.validate()?;
    if !matches!(cli.command, Command::Simulate { .. }) && config.inputs.is_empty() {
        bail!("no input files (pass them as arguments or list them in config `inputs`)");
    }
    let out = OutputDir::create(&out_dir)?;
    match cli.command {
        Command::FitS21 { .. } => commands::fit_s21::run(&config, out),
        Command::Spectrum { .. } => commands::spectrum::run(&config, out),
        Command::Power { .. } => commands::power::run(&config, out),
        Command::Compare { .. } => commands::compare::run(&config, out),
        Command::Simulate { seed, .. } => commands::simulate::run(&config, out, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Flagged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
