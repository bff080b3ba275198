//! The JSON run configuration, command-line overrides, and the fully
//! resolved form echoed to `run.json`.

use std::fs;
use std::path::{Path, PathBuf};

use evsens::diagnostics::{Thresholds, DEFAULT_DEGENERATE_TOL};
use evsens::experiment::{preset, ExperimentName, ExperimentSpec, OracleSpec, Problem, StageSeeds, TargetConfig};
use evsens::model::PriorSpec;
use evsens::sampler::SamplerConfig;
use evsens::samples::ResampleScheme;
use evsens::sensitivity::SensitivityPolicy;
use evsens::target::TargetChoice;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub k_max: f64,
    pub ess_min: f64,
    /// Bootstrap replicates over chains; 0 keeps the per-chain standard error.
    pub bootstrap: usize,
    pub scheme: ResampleScheme,
    pub degenerate_tol: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        PolicyConfig {
            k_max: t.k_max,
            ess_min: t.ess_min,
            bootstrap: 30,
            scheme: ResampleScheme::default(),
            degenerate_tol: DEFAULT_DEGENERATE_TOL,
        }
    }
}

impl PolicyConfig {
    pub fn bootstrap(&self) -> Option<usize> {
        (self.bootstrap > 0).then_some(self.bootstrap)
    }

    pub fn sensitivity(&self, seed: u64, target: &TargetConfig) -> SensitivityPolicy {
        SensitivityPolicy {
            thresholds: Thresholds {
                k_max: self.k_max,
                ess_min: self.ess_min,
            },
            seed,
            scheme: self.scheme,
            bootstrap: self.bootstrap(),
            degenerate_tol: self.degenerate_tol,
            fit: target.fit_options(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.k_max.is_finite() && self.ess_min.is_finite()) {
            return Err(CliError::config("k_max and ess_min must be finite"));
        }
        if !(0.0..=1.0).contains(&self.ess_min) {
            return Err(CliError::config(format!("ess_min must lie in [0, 1], got {}", self.ess_min)));
        }
        if !(self.degenerate_tol >= 0.0 && self.degenerate_tol < 1.0) {
            return Err(CliError::config("degenerate_tol must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Files a command reads besides the configuration itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_file: Option<PathBuf>,
}

/// Configuration as read from disk; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that wrote this file (informational).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Fills the fields below that are left out with the named preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<Problem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    pub policy: PolicyConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternatives: Option<Vec<PriorSpec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    pub inputs: Inputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_cache: Option<PathBuf>,
    /// Derived from `seed`; checked on load when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<StageSeeds>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serialises") + "\n";
    fs::write(path, text).map_err(|e| evsens::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        if let Some(seeds) = cfg.seeds {
            if seeds != StageSeeds::derive(cfg.seed) {
                return Err(CliError::Schema {
                    path: path.to_path_buf(),
                    message: format!("recorded stage seeds do not match seed {}", cfg.seed),
                });
            }
        }
        Ok(cfg)
    }

    /// Fills fields the user left out from the experiment preset, if any,
    /// and derives the stage seeds.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(name) = self.experiment {
            let p = preset(name);
            self.problem.get_or_insert(p.problem);
            self.sampler.get_or_insert(p.sampler);
            self.target.get_or_insert(p.target);
            self.alternatives.get_or_insert(p.alternatives);
            self.oracle.get_or_insert(p.oracle);
        }
        self.target.get_or_insert_with(TargetConfig::default);
        let seeds = StageSeeds::derive(self.seed);
        if let Some(s) = self.sampler.as_mut() {
            s.seed = seeds.sampler;
        }
        self.seeds = Some(seeds);
        if self.threads == Some(0) {
            return Err(CliError::config("--threads must be at least 1"));
        }
        self.policy.validate()?;
        Ok(self)
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::derive(self.seed)
    }

    pub fn target(&self) -> TargetConfig {
        self.target.unwrap_or_default()
    }

    pub fn problem(&self) -> Result<&Problem> {
        self.problem
            .as_ref()
            .ok_or_else(|| CliError::config("no problem given: set `problem` or `experiment` in the config"))
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        let mut s = self.sampler.clone().unwrap_or_default();
        s.seed = self.seeds().sampler;
        Ok(s)
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        let name = self
            .experiment
            .ok_or_else(|| CliError::config("no experiment named on the command line or in the config"))?;
        Ok(ExperimentSpec {
            name,
            problem: self.problem()?.clone(),
            sampler: self.sampler()?,
            target: self.target(),
            alternatives: self
                .alternatives
                .clone()
                .ok_or_else(|| CliError::config("no alternative priors"))?,
            oracle: self.oracle.clone().unwrap_or(OracleSpec::None),
        })
    }
}

/// Values given on the command line; each one beats the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub bootstrap: Option<usize>,
    pub temperature: Option<f64>,
    pub k_max: Option<f64>,
    pub ess_min: Option<f64>,
    pub target: Option<TargetChoice>,
    pub oracle_cache: Option<PathBuf>,
    pub experiment: Option<ExperimentName>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
            cfg.seeds = None;
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        if let Some(v) = self.bootstrap {
            cfg.policy.bootstrap = v;
        }
        if let Some(v) = self.k_max {
            cfg.policy.k_max = v;
        }
        if let Some(v) = self.ess_min {
            cfg.policy.ess_min = v;
        }
        if let Some(v) = &self.oracle_cache {
            cfg.oracle_cache = Some(v.clone());
        }
        if let Some(v) = self.experiment {
            cfg.experiment = Some(v);
        }
        if self.temperature.is_some() || self.target.is_some() {
            // a preset target must be filled in before it is overridden
            if cfg.target.is_none() {
                cfg.target = Some(cfg.experiment.map(|n| preset(n).target).unwrap_or_default());
            }
            let t = cfg.target.as_mut().expect("just filled");
            if let Some(v) = self.temperature {
                t.temperature = v;
            }
            if let Some(v) = self.target {
                t.form = v;
            }
        }
    }
}
