//! Library side of the `sls` command: each subcommand is a function that
//! reads its inputs, writes one output directory with a manifest and
//! returns what it computed.

pub mod commands;
pub mod error;
pub mod manifest;

use clap::{Parser, Subcommand};

pub use commands::{cmd_clean, cmd_compare, cmd_fit, cmd_ppc, cmd_simulate};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sls", version, about = "Clean static light scattering traces and infer A2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trim, segment and summarize one run's traces into a dataset.
    Clean(commands::CleanArgs),
    /// Sample the posterior of one model.
    Fit(commands::FitArgs),
    /// Fit several models and rank them by DIC.
    Compare(commands::CompareArgs),
    /// Run a factorial simulation design.
    Simulate(commands::SimulateArgs),
    /// Posterior predictive p-values from a previous fit.
    Ppc(commands::PpcArgs),
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Clean(a) => cmd_clean(a).map(|_| ()),
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Compare(a) => cmd_compare(a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Ppc(a) => cmd_ppc(a).map(|_| ()),
    }
}
