//! Command-line front end: argument parsing, the JSON run configuration,
//! the subcommands and their file outputs.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, Result};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { common } => commands::sample(&common),
        Command::FitTarget { samples, common } => commands::fit_target(samples, &common),
        Command::Evidence {
            samples,
            target_file,
            common,
        } => commands::evidence(samples, target_file, &common),
        Command::Sensitivity {
            samples,
            priors,
            target_file,
            common,
        } => commands::sensitivity(samples, priors, target_file, &common),
        Command::Experiment { name, common } => commands::experiment(name.map(Into::into), &common),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}
