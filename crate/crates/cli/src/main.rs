mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Gain, passivity and feedback-loop certification experiments.
#[derive(Parser, Debug)]
#[command(name = "dissipcert", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory for reports, CSV files and plots.
    #[arg(long, global = true, default_value = "dissipcert-out")]
    pub out: PathBuf,
    /// Seed for probe and ensemble generation (overrides DISSIPCERT_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plots: bool,
    /// Exit with status 1 when the verdict is unstable or unbounded.
    #[arg(long, global = true)]
    pub expect_stable: bool,
    /// Setting override `name=value`, applied after DISSIPCERT_* variables.
    #[arg(long = "set", global = true, value_name = "NAME=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Gain and passivity report for a system file.
    Analyze {
        system: PathBuf,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Simulate a loop file and report its trajectory and gain.
    Interconnect {
        spec: PathBuf,
        /// CSV with the e1 signal (default: unit pulse of length 1).
        #[arg(long)]
        e1: Option<PathBuf>,
        /// CSV with the e2 signal (default: zero).
        #[arg(long)]
        e2: Option<PathBuf>,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Run an adversarial falsification campaign file.
    Falsify {
        campaign: PathBuf,
        /// Override the campaign budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// S-procedure ensemble report for an LTI system file.
    Sproc {
        system: PathBuf,
        /// passivity, e2-zero or small-gain.
        #[arg(long, default_value = "passivity")]
        tag: String,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Number of generators (members = generators × shifts).
        #[arg(long)]
        generators: Option<usize>,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Mass–spring phase sweep over (d, s0).
    Example {
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Grid size `NDxNS` over d and s0.
        #[arg(long, default_value = "41x41")]
        grid: String,
        #[arg(long, default_value = "-1,1", allow_hyphen_values = true)]
        d_range: String,
        #[arg(long, default_value = "0,2")]
        s0_range: String,
    },
    /// Equivalence check of the loop and multiplier transformations.
    Transform {
        spec: PathBuf,
        /// Loop-transformation parameters (comma separated).
        #[arg(long, default_value = "0.01,0.1")]
        eps: String,
        /// JSON file `{"delta1": [[...]], "delta2": [[...]]}`.
        #[arg(long)]
        multiplier: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Copy)]
pub struct TimeArgs {
    /// Sample period of time-domain signals.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Number of intervals of the time grid.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Unstable) => {
            if cli.common.expect_stable {
                eprintln!("verdict: unstable or unbounded");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
