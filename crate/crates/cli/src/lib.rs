//! Command-line front end: flat run configs, the subcommands, and the
//! exit-code contract (0 success, 1 configuration, 2 non-convergence, 3 I/O).

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use shadowcast::curvefit::ScanKind;

pub use commands::Outcome;
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "shadowcast",
    version,
    about = "Simulate and analyze absorption images of a single trapped ion"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file; a flag always wins.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Flat key = value config file, or the JSON output of an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SHADOWCAST_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Keep the per-point frames of a scan.
    #[arg(long, global = true)]
    pub keep_frames: bool,
    /// Fit the unfiltered contrast map.
    #[arg(long, global = true)]
    pub no_filter: bool,
    /// Peak contrast of the ion's shadow.
    #[arg(long, global = true)]
    pub contrast: Option<f64>,
    /// Transition wavelength, nm.
    #[arg(long, global = true, value_name = "NM")]
    pub lambda: Option<f64>,
    /// Excited-state lifetime with a unit, e.g. 8.1ns.
    #[arg(long, global = true, value_name = "DURATION")]
    pub tau: Option<String>,
    /// Any config key, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a signal/reference frame pair.
    Simulate,
    /// Fit the contrast map of a frame pair.
    Analyze { signal: PathBuf, reference: PathBuf },
    /// Run a synthetic detuning, intensity or power scan and fit it.
    Scan {
        #[arg(value_parser = parse_kind)]
        kind: ScanKind,
    },
    /// Fit a scan CSV.
    Fit { input: PathBuf },
    /// Print the transition's saturation intensity, cross section and limits.
    Constants {
        #[arg(long)]
        json: bool,
    },
}

fn parse_kind(s: &str) -> Result<ScanKind, String> {
    s.parse().map_err(|e: shadowcast::curvefit::SeriesError| e.to_string())
}

impl GlobalArgs {
    /// Defaults, then the config file, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if self.keep_frames {
            config.keep_frames = true;
        }
        if self.no_filter {
            config.filter = false;
        }
        if let Some(c) = self.contrast {
            config.contrast = c;
        }
        if let Some(l) = self.lambda {
            config.lambda_nm = l;
        }
        if let Some(t) = &self.tau {
            config.tau_ns = config::parse_duration_ns(t)?;
        }
        Ok(config)
    }
}

/// Runs one command. Text for stdout is returned in the outcome.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let config = cli.global.resolve()?;
    match &cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Analyze { signal, reference } => commands::analyze(&config, signal, reference),
        Command::Scan { kind } => commands::scan(&config, *kind),
        Command::Fit { input } => commands::fit(&config, input),
        Command::Constants { json } => Ok(Outcome {
            files: Vec::new(),
            summary: if *json {
                commands::constants_json(&config)?
            } else {
                commands::constants(&config)?.table()
            },
            failure: None,
        }),
    }
}
