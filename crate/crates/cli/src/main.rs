//! `kdvlab`: certificates, Figure-1 data, simulations, channel comparisons
//! and parameter sweeps for the delayed KdV–KdV boundary feedback.
//!
//! Exit status: 0 success, 1 infeasible certificate / failed bound /
//! numerical failure, 2 configuration error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdv_delay::Error;

#[derive(Parser, Debug)]
#[command(
    name = "kdvlab",
    version,
    about = "Certified decay and simulation for the delayed KdV-KdV system"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration (defaults to the Figure-1 setup).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for reports, tables and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `section.key=value`, applied in order after the file.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Grid preset: coarse (128), reference (256) or fine (512).
    #[arg(long, global = true)]
    resolution: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and check a decay certificate.
    Certify,
    /// Optimal μ₁ and the Figure-1 curves f and g.
    Optimize {
        /// Curve samples on [0, μ₁max].
        #[arg(long, default_value_t = 1001)]
        points: usize,
    },
    /// Run the scheme and check the certified bound.
    Simulate,
    /// Twin runs with the transport and history delay channels.
    CompareChannels,
    /// Certificates over a cartesian grid of parameters.
    Sweep {
        /// `NAME=START:STOP:COUNT` with NAME in alpha, beta, d, L, M.
        #[arg(long = "param", value_name = "RANGE")]
        params: Vec<String>,
        /// Refuse grids with more points than this.
        #[arg(long, default_value_t = 10_000)]
        max_points: usize,
        /// Also fit a decay rate from a run of this length at each point.
        #[arg(long)]
        fit_horizon: Option<f64>,
    },
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::InvalidParameter { .. }
            | Error::DelayTable(_)
            | Error::BoundaryConditions(_)
            | Error::GridTooCoarse { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::failed(format!("i/o: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify => commands::certify(&cli.common),
        Command::Optimize { points } => commands::optimize(&cli.common, points),
        Command::Simulate => commands::simulate(&cli.common),
        Command::CompareChannels => commands::compare_channels(&cli.common),
        Command::Sweep {
            params,
            max_points,
            fit_horizon,
        } => commands::sweep(&cli.common, &params, max_points, fit_horizon),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
