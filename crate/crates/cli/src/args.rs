use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evsens::experiment::ExperimentName;
use evsens::target::TargetChoice;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "evsens", version, about = "Evidence from posterior draws and cheap prior sensitivity sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw posterior samples with adaptive random-walk Metropolis.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the evidence target density to posterior draws.
    FitTarget {
        /// Samples directory (defaults to the one recorded in the config).
        samples: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate log evidence from posterior draws.
    Evidence {
        samples: Option<PathBuf>,
        /// Reuse a previously fitted target instead of fitting one.
        #[arg(long)]
        target_file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep alternative priors over existing draws.
    Sensitivity {
        samples: Option<PathBuf>,
        /// JSON array of prior definitions.
        priors: Option<PathBuf>,
        #[arg(long)]
        target_file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the toy studies end to end.
    Experiment {
        name: Option<ExperimentArg>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentArg {
    Gaussian,
    Rosenbrock,
}

impl From<ExperimentArg> for ExperimentName {
    fn from(a: ExperimentArg) -> Self {
        match a {
            ExperimentArg::Gaussian => ExperimentName::Gaussian,
            ExperimentArg::Rosenbrock => ExperimentName::Rosenbrock,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration (a previous run.json works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "evsens-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Bootstrap replicates over chains (0 disables).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Target temperature in (0, 1].
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub k_max: Option<f64>,
    #[arg(long)]
    pub ess_min: Option<f64>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// Where grid reference values are cached (default: inside --out).
    #[arg(long)]
    pub oracle_cache: Option<PathBuf>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            bootstrap: self.bootstrap,
            temperature: self.temperature,
            k_max: self.k_max,
            ess_min: self.ess_min,
            target: self.target.map(|t| match t {
                TargetArg::Gaussian => TargetChoice::Gaussian,
                TargetArg::Mixture => TargetChoice::Mixture,
            }),
            oracle_cache: self.oracle_cache.clone(),
            experiment: None,
        }
    }
}
