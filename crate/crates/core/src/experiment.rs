//! The two toy studies end to end: sample, fit the target, estimate the
//! evidence, sweep alternative priors and compare against reference values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::EvidenceEstimate;
use crate::math::sub_seed;
use crate::model::{Prior, PriorSpec, ToyLikelihood};
use crate::oracles::{gaussian_log_evidence, grid_log_evidence, GridEvidence, GridSpec};
use crate::sampler::{run_metropolis, SamplerConfig};
use crate::samples::ChainSet;
use crate::sensitivity::{SensitivityContext, SensitivityPolicy, SensitivityReport};
use crate::target::{fit_target_auto, FitOptions, LearnedTarget, TargetChoice, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Gaussian,
    Rosenbrock,
}

impl std::str::FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ExperimentName::Gaussian),
            "rosenbrock" => Ok(ExperimentName::Rosenbrock),
            other => Err(Error::input(format!(
                "unknown experiment {other:?} (expected gaussian or rosenbrock)"
            ))),
        }
    }
}

/// Prior and likelihood of the original analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub prior: PriorSpec<f64>,
    pub likelihood: ToyLikelihood<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub form: TargetChoice,
    pub temperature: f64,
    pub ridge: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl TargetConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            ridge: self.ridge,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

impl Default for TargetConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        TargetConfig {
            form: TargetChoice::Gaussian,
            temperature: DEFAULT_TEMPERATURE,
            ridge: fit.ridge,
            max_iter: fit.max_iter,
            tol: fit.tol,
        }
    }
}

/// How reference log Z values are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleSpec {
    /// Zero-mean isotropic Gaussian likelihood and priors.
    ClosedForm,
    Grid { grid: GridSpec },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub problem: Problem,
    pub sampler: SamplerConfig,
    pub target: TargetConfig,
    pub alternatives: Vec<PriorSpec<f64>>,
    pub oracle: OracleSpec,
}

/// Default Gaussian study: 10-D, likelihood width 2e-4, unit prior, 16 x 1000
/// draws, alternative widths 10^-1.5 .. 10^-4 in half-decade steps.
pub fn gaussian_experiment() -> ExperimentSpec {
    let d = 10;
    ExperimentSpec {
        name: ExperimentName::Gaussian,
        problem: Problem {
            prior: PriorSpec::isotropic_gaussian(d, 0.0, 1.0),
            likelihood: ToyLikelihood::Gaussian {
                dimension: d,
                sigma: 2e-4,
            },
        },
        sampler: SamplerConfig {
            n_chains: 16,
            n_draws: 1000,
            // chains start ~1e4 posterior widths away from the mode
            n_burnin: Some(2000),
            // near-independent draws keep the tail-shape estimate from being
            // biased low by autocorrelation
            thin: 40,
            ..SamplerConfig::default()
        },
        target: TargetConfig::default(),
        alternatives: [-1.5, -2.0, -2.5, -3.0, -3.5, -4.0]
            .iter()
            .map(|&e: &f64| PriorSpec::isotropic_gaussian(d, 0.0, 10f64.powf(e)))
            .collect(),
        oracle: OracleSpec::ClosedForm,
    }
}

/// Default Rosenbrock study: uniform box prior on [-10, 10]^2, 32 x 2000
/// draws, Gaussian alternatives with covariance 0.06 I centred at (1, 1 + s).
pub fn rosenbrock_experiment() -> ExperimentSpec {
    ExperimentSpec {
        name: ExperimentName::Rosenbrock,
        problem: Problem {
            prior: PriorSpec::uniform(vec![-10.0; 2], vec![10.0; 2]),
            likelihood: ToyLikelihood::Rosenbrock { a: 1.0, b: 100.0 },
        },
        sampler: SamplerConfig {
            n_chains: 32,
            n_draws: 2000,
            n_burnin: Some(2000),
            thin: 10,
            ..SamplerConfig::default()
        },
        target: TargetConfig {
            form: TargetChoice::Mixture,
            ..TargetConfig::default()
        },
        alternatives: rosenbrock_shifts(&[0.0, 2.0, 4.0, 6.0, 8.0, 10.0], 0.06),
        oracle: OracleSpec::Grid {
            grid: GridSpec::square(-10.0, 10.0, 4000, 2),
        },
    }
}

/// Gaussian priors with covariance `variance * I` centred at `(1, 1 + s)`.
pub fn rosenbrock_shifts(shifts: &[f64], variance: f64) -> Vec<PriorSpec<f64>> {
    shifts
        .iter()
        .map(|&s| PriorSpec::gaussian(vec![1.0, 1.0 + s], vec![variance.sqrt(); 2]))
        .collect()
}

pub fn preset(name: ExperimentName) -> ExperimentSpec {
    match name {
        ExperimentName::Gaussian => gaussian_experiment(),
        ExperimentName::Rosenbrock => rosenbrock_experiment(),
    }
}

/// Persistent store of grid results keyed by (prior, likelihood, grid).
#[derive(Debug, Default)]
pub struct OracleCache {
    path: Option<PathBuf>,
    entries: BTreeMap<String, GridEvidence>,
}

impl OracleCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the cache file at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::format(&path, Some(e.line()), e.to_string()))?
        } else {
            BTreeMap::new()
        };
        Ok(OracleCache {
            path: Some(path),
            entries,
        })
    }

    fn key(prior: &PriorSpec<f64>, likelihood: &ToyLikelihood<f64>, grid: &GridSpec) -> String {
        serde_json::to_string(&(prior, likelihood, grid)).expect("oracle key serialises")
    }

    pub fn grid(&mut self, prior: &PriorSpec<f64>, likelihood: &ToyLikelihood<f64>, grid: &GridSpec) -> Result<GridEvidence> {
        let key = Self::key(prior, likelihood, grid);
        if let Some(hit) = self.entries.get(&key) {
            return Ok(hit.clone());
        }
        let value = grid_log_evidence(&Prior::new(prior.clone())?, likelihood, grid)?;
        self.entries.insert(key, value.clone());
        self.save()?;
        Ok(value)
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let text = serde_json::to_string_pretty(&self.entries).expect("cache serialises");
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn isotropic_zero_mean(spec: &PriorSpec<f64>) -> Option<f64> {
    match spec {
        PriorSpec::Gaussian { mean, std, .. } if mean.iter().all(|&m| m == 0.0) && std.iter().all(|&s| s == std[0]) => {
            Some(std[0])
        }
        _ => None,
    }
}

/// Reference log Z of `problem.likelihood` under `prior` (`None` without an oracle).
pub fn oracle_log_z(
    problem: &Problem,
    prior: &PriorSpec<f64>,
    oracle: &OracleSpec,
    cache: &mut OracleCache,
) -> Result<Option<f64>> {
    match oracle {
        OracleSpec::None => Ok(None),
        OracleSpec::ClosedForm => {
            let (d, sigma_l) = match problem.likelihood {
                ToyLikelihood::Gaussian { dimension, sigma } => (dimension, sigma),
                _ => return Err(Error::input("the closed-form oracle needs the Gaussian likelihood")),
            };
            let sigma_p = isotropic_zero_mean(prior).ok_or_else(|| {
                Error::input(format!(
                    "the closed-form oracle needs a zero-mean isotropic Gaussian prior, got {}",
                    prior.describe()
                ))
            })?;
            gaussian_log_evidence(d, sigma_l, sigma_p).map(Some)
        }
        OracleSpec::Grid { grid } => Ok(Some(cache.grid(prior, &problem.likelihood, grid)?.log_z)),
    }
}

/// Seeds for every stage, derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub sampler: u64,
    pub target: u64,
    pub evidence: u64,
    pub sensitivity: u64,
}

impl StageSeeds {
    pub fn derive(master: u64) -> Self {
        StageSeeds {
            sampler: sub_seed(master, "sample", 0),
            target: sub_seed(master, "fit-target", 0),
            evidence: sub_seed(master, "evidence", 0),
            sensitivity: sub_seed(master, "sensitivity", 0),
        }
    }
}

pub struct ExperimentOutcome {
    pub samples: ChainSet<f64>,
    pub target: LearnedTarget<f64>,
    pub original: EvidenceEstimate<f64>,
    pub original_truth: Option<f64>,
    pub report: SensitivityReport<f64>,
    /// Reference log Z per alternative prior (NaN where unavailable).
    pub truths: Vec<f64>,
}

/// Fits the target and runs the sweep on existing draws.
pub fn analyse_draws(
    spec: &ExperimentSpec,
    samples: ChainSet<f64>,
    policy: &SensitivityPolicy,
    seeds: StageSeeds,
    cache: &mut OracleCache,
) -> Result<ExperimentOutcome> {
    let prior0 = Prior::new(spec.problem.prior.clone())?;
    let target = fit_target_auto(
        &samples,
        spec.target.form,
        spec.target.temperature,
        seeds.target,
        &spec.target.fit_options(),
    )?;
    let ctx = SensitivityContext::new(&samples, &prior0, &spec.problem.likelihood, &target)?;
    let original = ctx.original_evidence(None, seeds.evidence)?;
    let policy = SensitivityPolicy {
        seed: seeds.sensitivity,
        fit: spec.target.fit_options(),
        ..*policy
    };
    let report = ctx.sweep(&spec.alternatives, &policy)?;
    let original_truth = oracle_log_z(&spec.problem, &spec.problem.prior, &spec.oracle, cache)?;
    let truths: Vec<f64> = spec
        .alternatives
        .iter()
        .enumerate()
        .map(|(i, p)| match oracle_log_z(&spec.problem, p, &spec.oracle, cache) {
            Ok(v) => v.unwrap_or(f64::NAN),
            Err(e) => {
                warn!("no reference value for alternative prior {i}: {e}");
                f64::NAN
            }
        })
        .collect();
    drop(ctx);
    Ok(ExperimentOutcome {
        samples,
        target,
        original,
        original_truth,
        report,
        truths,
    })
}

/// Samples the original posterior, then [`analyse_draws`].
pub fn run_experiment(
    spec: &ExperimentSpec,
    policy: &SensitivityPolicy,
    seeds: StageSeeds,
    cache: &mut OracleCache,
) -> Result<ExperimentOutcome> {
    let prior0 = Prior::new(spec.problem.prior.clone())?;
    spec.problem.likelihood.validate()?;
    let sampler = SamplerConfig {
        seed: seeds.sampler,
        ..spec.sampler.clone()
    };
    let samples = run_metropolis(&prior0, &spec.problem.likelihood, &sampler)?;
    analyse_draws(spec, samples, policy, seeds, cache)
}

/// Default cache location inside an output directory.
pub fn default_cache_path(out: &Path) -> PathBuf {
    out.join("oracle-cache.json")
}
