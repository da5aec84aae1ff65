//! `cbv`: validate, value and report Cut-Report packages from the command line.
//!
//! Exit status: 0 success, 1 validation findings, 2 computation error, 64 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_FINDINGS: u8 = 1;
pub const EXIT_COMPUTE: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "cbv", version, about = "Cut-based valuation of ownership networks")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a package against the D1-D5 rules, hashes and schema.
    Validate {
        #[arg(long)]
        package: PathBuf,
    },
    /// Value the perimeter and write the Cut Summary.
    Compute(ComputeArgs),
    /// Cross-priced CBV-Fisher indices between two period packages.
    Fisher(FisherArgs),
    /// Run the seniority clearing engine on a clearing.json problem.
    Clearing(ClearingArgs),
    /// Build a control matrix from a share matrix.
    Control(ControlArgs),
    /// Breakpoint spacing for a target approximation error.
    Pwa {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        gamma: f64,
    },
    /// Render the disclosure sheet.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Override the package regime.
    #[arg(long)]
    pub regime: Option<String>,
    /// direct, neumann or bicgstab.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[arg(long)]
    pub package: PathBuf,
    /// Observer document; defaults to the packaged pov.json.
    #[arg(long)]
    pub pov: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Write the Cut Summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Monte Carlo draws for an uncertainty band on the share entries.
    #[arg(long)]
    pub mc_draws: Option<usize>,
    /// Additive half-width applied to every nonzero boundary share.
    #[arg(long)]
    pub mc_amplitude: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FisherArgs {
    #[arg(long)]
    pub prev: PathBuf,
    #[arg(long)]
    pub curr: PathBuf,
    /// reestimate or reprice (regime B only).
    #[arg(long, default_value = "reestimate")]
    pub regime_b_pricing: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClearingArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// greatest or least; defaults to the spec.
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Comma-separated perimeter; prints post-clearing boundary flows.
    #[arg(long)]
    pub perimeter: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    /// Square share matrix, header `id` then node ids; row owns column.
    #[arg(long)]
    pub network: PathBuf,
    /// A, B, B_prime or C.
    #[arg(long)]
    pub option: String,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub normalize: bool,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Comma-separated seed; prints the smallest closed perimeter containing it.
    #[arg(long)]
    pub select: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub tau_p: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub package: PathBuf,
    /// Previous-period package; adds the Fisher row.
    #[arg(long)]
    pub prev: Option<PathBuf>,
    /// Label for the Fisher row, e.g. "2025-07 -> 2025-08".
    #[arg(long)]
    pub period: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub enum Failure {
    Usage(String),
    Findings,
    Compute { code: String, message: String },
}

impl From<cbv_core::Error> for Failure {
    fn from(e: cbv_core::Error) -> Self {
        Failure::Compute {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<cbv_report::ReportError> for Failure {
    fn from(e: cbv_report::ReportError) -> Self {
        Failure::Compute {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Findings) => ExitCode::from(EXIT_FINDINGS),
        Err(Failure::Compute { code, message }) => {
            eprintln!("error[{code}]: {message}");
            ExitCode::from(EXIT_COMPUTE)
        }
    }
}
