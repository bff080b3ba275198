//! One function per subcommand. Each loads and resolves its configuration,
//! writes `run.json` before any computation, then its numeric outputs.

use std::fs;
use std::path::{Path, PathBuf};

use evsens::evidence::EvidenceEstimate;
use evsens::experiment::{
    analyse_draws, default_cache_path, oracle_log_z, ExperimentName, OracleCache, OracleSpec, Problem,
};
use evsens::model::{DensityModel, Prior, PriorSpec};
use evsens::sampler::run_metropolis;
use evsens::samples::{read_chains, write_chains};
use evsens::sensitivity::{percent_error, write_rows_csv, SensitivityContext, SensitivityReport};
use evsens::target::{fit_target_auto, LearnedTarget, TargetForm};
use evsens::ChainSet64;
use log::{info, warn};
use serde::Serialize;

use crate::args::Common;
use crate::config::{read_json, write_json, RunConfig, RUN_FILE};
use crate::error::{CliError, Result};
use crate::plot::{LinePlot, Series};

pub const EVIDENCE_FILE: &str = "evidence.json";
pub const SENSITIVITY_FILE: &str = "sensitivity.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TARGET_FILE: &str = "target.json";
pub const TIMING_FILE: &str = "timing.json";
pub const SAMPLES_DIR: &str = "samples";
pub const CONTOUR_DRAWS_FILE: &str = "contour_draws.csv";
pub const PRIOR_ELLIPSES_FILE: &str = "prior_ellipses.csv";

fn load_config(
    common: &Common,
    samples: Option<&Path>,
    experiment: Option<ExperimentName>,
    command: &str,
) -> Result<RunConfig> {
    // without --config, a samples directory written by `sample` carries its own run.json
    let mut cfg = match (&common.config, samples) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(dir)) if dir.join(RUN_FILE).is_file() => RunConfig::load(&dir.join(RUN_FILE))?,
        _ => RunConfig::default(),
    };
    let mut ov = common.overrides();
    ov.experiment = experiment;
    ov.apply(&mut cfg);
    cfg.command = Some(command.into());
    cfg.resolve()
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f),
        None => f(),
    }
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| evsens::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn samples_dir(positional: Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    let dir = positional
        .or_else(|| cfg.inputs.samples.clone())
        .ok_or_else(|| CliError::config("no samples directory given"))?;
    cfg.inputs.samples = Some(dir.clone());
    Ok(dir)
}

fn cache(cfg: &RunConfig, out: &Path) -> Result<OracleCache> {
    let path = cfg.oracle_cache.clone().unwrap_or_else(|| default_cache_path(out));
    Ok(OracleCache::open(path)?)
}

fn fit(cfg: &RunConfig, samples: &ChainSet64) -> Result<LearnedTarget<f64>> {
    let t = cfg.target();
    Ok(fit_target_auto(samples, t.form, t.temperature, cfg.seeds().target, &t.fit_options())?)
}

/// Loads `--target-file` if one is given, else fits and saves a target under
/// `out`. The returned reference is relative to `out` in the second case, so
/// reports do not depend on where the output directory lives.
fn target_for(cfg: &RunConfig, samples: &ChainSet64, out: &Path) -> Result<(LearnedTarget<f64>, String)> {
    match &cfg.inputs.target_file {
        Some(p) => Ok((LearnedTarget::load(p)?, p.display().to_string())),
        None => {
            let t = fit(cfg, samples)?;
            t.save(out.join(TARGET_FILE))?;
            Ok((t, TARGET_FILE.into()))
        }
    }
}

fn check_problem(problem: &Problem, samples: &ChainSet64) -> Result<Prior<f64>> {
    let prior = Prior::new(problem.prior.clone())?;
    problem.likelihood.validate()?;
    if prior.dimension() != samples.dimension() {
        return Err(evsens::Error::DimensionMismatch {
            expected: prior.dimension(),
            got: samples.dimension(),
        }
        .into());
    }
    Ok(prior)
}

pub fn sample(common: &Common) -> Result<()> {
    let mut cfg = load_config(common, None, None, "sample")?;
    let problem = cfg.problem()?.clone();
    let sampler = cfg.sampler()?;
    cfg.sampler = Some(sampler.clone());
    let out = &common.out;
    create_out(out)?;
    write_json(&out.join(RUN_FILE), &cfg)?;
    in_pool(cfg.threads, || {
        let prior = Prior::new(problem.prior.clone())?;
        problem.likelihood.validate()?;
        let cs = run_metropolis(&prior, &problem.likelihood, &sampler)?;
        write_chains(&cs, out)?;
        info!("wrote {} chains of {} draws to {}", cs.n_chains(), cs.chain_len(0), out.display());
        Ok(())
    })
}

pub fn fit_target(samples: Option<PathBuf>, common: &Common) -> Result<()> {
    let mut cfg = load_config(common, samples.as_deref(), None, "fit-target")?;
    let dir = samples_dir(samples, &mut cfg)?;
    cfg.target = Some(cfg.target());
    let out = &common.out;
    create_out(out)?;
    write_json(&out.join(RUN_FILE), &cfg)?;
    in_pool(cfg.threads, || {
        let cs = read_chains::<f64>(&dir)?;
        let t = fit(&cfg, &cs)?;
        t.save(out.join(TARGET_FILE))?;
        Ok(())
    })
}

#[derive(Serialize)]
struct TargetSummary {
    form: TargetForm,
    temperature: f64,
    heldout_log_score: f64,
    converged: bool,
}

impl TargetSummary {
    fn of(t: &LearnedTarget<f64>) -> Self {
        TargetSummary {
            form: t.form(),
            temperature: t.temperature(),
            heldout_log_score: t.metadata().heldout_log_score,
            converged: t.metadata().converged,
        }
    }
}

#[derive(Serialize)]
struct EvidenceReport<'a> {
    #[serde(flatten)]
    estimate: &'a EvidenceEstimate<f64>,
    target: TargetSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_z_true: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    percent_error: Option<f64>,
}

fn write_evidence(
    out: &Path,
    estimate: &EvidenceEstimate<f64>,
    target: &LearnedTarget<f64>,
    truth: Option<f64>,
) -> Result<()> {
    let report = EvidenceReport {
        estimate,
        target: TargetSummary::of(target),
        log_z_true: truth,
        percent_error: truth.map(|t| percent_error(estimate.log_z, t)),
    };
    write_json(&out.join(EVIDENCE_FILE), &report)
}

pub fn evidence(samples: Option<PathBuf>, target_file: Option<PathBuf>, common: &Common) -> Result<()> {
    let mut cfg = load_config(common, samples.as_deref(), None, "evidence")?;
    let dir = samples_dir(samples, &mut cfg)?;
    if target_file.is_some() {
        cfg.inputs.target_file = target_file;
    }
    cfg.target = Some(cfg.target());
    let problem = cfg.problem()?.clone();
    let out = &common.out;
    create_out(out)?;
    write_json(&out.join(RUN_FILE), &cfg)?;
    in_pool(cfg.threads, || {
        let cs = read_chains::<f64>(&dir)?;
        let prior = check_problem(&problem, &cs)?;
        let (target, target_path) = target_for(&cfg, &cs, out)?;
        let ctx = SensitivityContext::new(&cs, &prior, &problem.likelihood, &target)?;
        let mut est = ctx.original_evidence(cfg.policy.bootstrap(), cfg.seeds().evidence)?;
        est.target_file = Some(target_path);
        let truth = match &cfg.oracle {
            Some(o) => oracle_log_z(&problem, &problem.prior, o, &mut cache(&cfg, out)?)?,
            None => None,
        };
        write_evidence(out, &est, &target, truth)
    })
}

/// Reference values for each prior; failures leave a NaN and a warning.
fn truths(cfg: &RunConfig, problem: &Problem, priors: &[PriorSpec<f64>], out: &Path) -> Result<Option<Vec<f64>>> {
    let oracle = match &cfg.oracle {
        None | Some(OracleSpec::None) => return Ok(None),
        Some(o) => o,
    };
    let mut c = cache(cfg, out)?;
    Ok(Some(
        priors
            .iter()
            .enumerate()
            .map(|(i, p)| match oracle_log_z(problem, p, oracle, &mut c) {
                Ok(v) => v.unwrap_or(f64::NAN),
                Err(e) => {
                    warn!("no reference value for alternative prior {i}: {e}");
                    f64::NAN
                }
            })
            .collect(),
    ))
}

pub fn sensitivity(
    samples: Option<PathBuf>,
    priors: Option<PathBuf>,
    target_file: Option<PathBuf>,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common, samples.as_deref(), None, "sensitivity")?;
    let dir = samples_dir(samples, &mut cfg)?;
    if let Some(p) = priors {
        cfg.alternatives = Some(read_json::<Vec<PriorSpec<f64>>>(&p)?);
    }
    if target_file.is_some() {
        cfg.inputs.target_file = target_file;
    }
    cfg.target = Some(cfg.target());
    let alternatives = cfg
        .alternatives
        .clone()
        .ok_or_else(|| CliError::config("no alternative priors: pass a priors file or set `alternatives`"))?;
    let problem = cfg.problem()?.clone();
    let out = &common.out;
    create_out(out)?;
    write_json(&out.join(RUN_FILE), &cfg)?;
    in_pool(cfg.threads, || {
        let cs = read_chains::<f64>(&dir)?;
        let prior = check_problem(&problem, &cs)?;
        let (target, _) = target_for(&cfg, &cs, out)?;
        let ctx = SensitivityContext::new(&cs, &prior, &problem.likelihood, &target)?;
        let policy = cfg.policy.sensitivity(cfg.seeds().sensitivity, &cfg.target());
        let report = ctx.sweep(&alternatives, &policy)?;
        let truth = truths(&cfg, &problem, &alternatives, out)?;
        let axis = sweep_axis(cfg.experiment, &alternatives);
        write_sweep(out, &report, truth.as_deref(), &axis, &cfg)
    })
}

pub fn experiment(name: Option<ExperimentName>, common: &Common) -> Result<()> {
    let mut cfg = load_config(common, None, name, "experiment")?;
    let spec = cfg.experiment_spec()?;
    cfg.sampler = Some(spec.sampler.clone());
    let out = &common.out;
    create_out(out)?;
    write_json(&out.join(RUN_FILE), &cfg)?;
    in_pool(cfg.threads, || {
        let prior = Prior::new(spec.problem.prior.clone())?;
        spec.problem.likelihood.validate()?;
        let cs = run_metropolis(&prior, &spec.problem.likelihood, &spec.sampler)?;
        write_chains(&cs, out.join(SAMPLES_DIR))?;
        let policy = cfg.policy.sensitivity(cfg.seeds().sensitivity, &spec.target);
        let mut c = cache(&cfg, out)?;
        let outcome = analyse_draws(&spec, cs, &policy, cfg.seeds(), &mut c)?;
        outcome.target.save(out.join(TARGET_FILE))?;
        let mut original = outcome.original.clone();
        original.target_file = Some(TARGET_FILE.into());
        write_evidence(out, &original, &outcome.target, outcome.original_truth)?;
        let axis = sweep_axis(Some(spec.name), &spec.alternatives);
        write_sweep(out, &outcome.report, Some(&outcome.truths), &axis, &cfg)?;
        if spec.name == ExperimentName::Rosenbrock {
            write_contour_data(out, &outcome.samples, &outcome.report)?;
        }
        Ok(())
    })
}

/// Plot abscissa: log10 width for the Gaussian study, the y shift for the
/// Rosenbrock study, the sweep index otherwise.
pub fn sweep_axis(name: Option<ExperimentName>, priors: &[PriorSpec<f64>]) -> (String, Vec<f64>) {
    let fallback = || ("alternative prior index".to_string(), (0..priors.len()).map(|i| i as f64).collect());
    let gaussian = |f: &dyn Fn(&[f64], &[f64]) -> f64| -> Vec<f64> {
        priors
            .iter()
            .map(|p| match p {
                PriorSpec::Gaussian { mean, std, .. } => f(mean, std),
                _ => f64::NAN,
            })
            .collect()
    };
    match name {
        Some(ExperimentName::Gaussian) => ("log10 prior width".into(), gaussian(&|_, s| s[0].log10())),
        Some(ExperimentName::Rosenbrock) => (
            "prior shift along y".into(),
            gaussian(&|m, _| m.get(1).map_or(f64::NAN, |y| y - 1.0)),
        ),
        None => fallback(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| evsens::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_sweep(
    out: &Path,
    report: &SensitivityReport<f64>,
    truth: Option<&[f64]>,
    axis: &(String, Vec<f64>),
    cfg: &RunConfig,
) -> Result<()> {
    let rows = report.rows(truth);
    write_rows_csv(out.join(SWEEP_FILE), &rows)?;

    // wall-clock times vary run to run, so they live apart from the numbers
    let mut json = serde_json::to_value(report).expect("report serialises");
    let mut timing = Vec::new();
    if let Some(entries) = json.get_mut("entries").and_then(|e| e.as_array_mut()) {
        for e in entries {
            if let Some(obj) = e.as_object_mut() {
                timing.push(obj.remove("elapsed_seconds").unwrap_or_default());
            }
        }
    }
    write_json(&out.join(SENSITIVITY_FILE), &json)?;
    write_json(&out.join(TIMING_FILE), &serde_json::json!({ "entry_seconds": timing }))?;

    let (label, xs) = axis;
    let series = |name: &str, ys: Vec<f64>| Series {
        name: name.into(),
        points: xs.iter().copied().zip(ys).collect(),
    };
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let plots = [
        (
            "ess_fraction.svg",
            LinePlot {
                title: "Effective sample size fraction".into(),
                x_label: label.clone(),
                y_label: "ESS / N".into(),
                series: vec![series("ess", rows.iter().map(|r| opt(r.ess_fraction)).collect())],
                references: vec![(cfg.policy.ess_min, format!("ess_min = {}", cfg.policy.ess_min))],
            },
        ),
        (
            "pareto_k.svg",
            LinePlot {
                title: "Pareto tail shape of the importance weights".into(),
                x_label: label.clone(),
                y_label: "k".into(),
                series: vec![series(
                    "k",
                    report
                        .entries
                        .iter()
                        .map(|e| e.weights.as_ref().map_or(f64::NAN, |w| w.pareto_k.value()))
                        .collect(),
                )],
                references: vec![(cfg.policy.k_max, format!("k_max = {}", cfg.policy.k_max))],
            },
        ),
    ];
    for (file, plot) in &plots {
        write_text(&out.join(file), &plot.render())?;
    }
    if truth.is_some() {
        let plot = LinePlot {
            title: "Percent error in the evidence".into(),
            x_label: label.clone(),
            y_label: "100 (log Z - log Z_true) / |log Z_true|".into(),
            series: vec![series("error", rows.iter().map(|r| opt(r.percent_error)).collect())],
            references: vec![(0.0, String::new())],
        };
        write_text(&out.join("percent_error.svg"), &plot.render())?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    evsens::Error::Format {
        path: path.to_path_buf(),
        line: None,
        message: e.to_string(),
    }
    .into()
}

#[derive(Serialize)]
struct DrawRow {
    chain: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct EllipseRow {
    index: usize,
    mean_x: f64,
    mean_y: f64,
    sd_x: f64,
    sd_y: f64,
    correlation: f64,
    action: String,
}

/// Posterior draws and the axis-aligned alternative prior ellipses.
fn write_contour_data(out: &Path, samples: &ChainSet64, report: &SensitivityReport<f64>) -> Result<()> {
    let path = out.join(CONTOUR_DRAWS_FILE);
    let mut w = csv_writer(&path)?;
    for c in 0..samples.n_chains() {
        for d in samples.chain_draws(c) {
            w.serialize(DrawRow { chain: c, x: d[0], y: d[1] }).map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| evsens::Error::Io {
        path: path.clone(),
        source: e,
    })?;

    let path = out.join(PRIOR_ELLIPSES_FILE);
    let mut w = csv_writer(&path)?;
    for e in &report.entries {
        if let Some(PriorSpec::Gaussian { mean, std, .. }) = &e.prior_spec {
            if mean.len() != 2 {
                continue;
            }
            w.serialize(EllipseRow {
                index: e.index,
                mean_x: mean[0],
                mean_y: mean[1],
                sd_x: std[0],
                sd_y: std[1],
                correlation: 0.0,
                action: e.decision.as_ref().map_or(String::new(), |d| d.action.as_str().into()),
            })
            .map_err(|err| csv_error(&path, err))?;
        }
    }
    w.flush().map_err(|e| evsens::Error::Io { path, source: e })?;
    Ok(())
}
