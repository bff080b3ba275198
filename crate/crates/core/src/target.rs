//! Learned target densities `phi(theta)` for the harmonic mean estimator.
//!
//! Targets are Gaussian mixtures (a single Gaussian being the one-component
//! case) fitted to posterior draws. After fitting, every covariance is
//! multiplied by the temperature `T <= 1`, which makes the tails of `phi`
//! thinner than those of the fitted density.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{cholesky, forward_substitute, log_det_from_cholesky, log_sum_exp, rng_from_seed};
use crate::samples::ChainSet;
use crate::scalar::Scalar;

pub const DEFAULT_TEMPERATURE: f64 = 0.8;
const FORMAT_VERSION: u32 = 1;

/// A normalised density that can stand in the numerator of the estimator.
pub trait TargetDensity<F: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;

    fn log_phi_unchecked(&self, theta: &[F]) -> F;

    fn log_phi(&self, theta: &[F]) -> Result<F> {
        check_dim(self.dimension(), theta.len())?;
        Ok(self.log_phi_unchecked(theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetForm {
    SingleGaussian,
    Mixture { components: usize },
}

/// What to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetChoice {
    #[default]
    Gaussian,
    /// Mixture with K chosen from {1, 2, 3} by held-out log score.
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Add `1e-9 * trace / d` to singular covariances instead of failing.
    pub ridge: bool,
    pub max_iter: usize,
    /// EM stops when the mean training log-likelihood changes by less than this.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: true,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component<F> {
    pub weight: F,
    pub mean: Vec<F>,
    /// Fitted (untempered) covariance, row-major.
    pub covariance: Vec<F>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub n_train: usize,
    pub n_heldout: usize,
    /// Mean untempered log density of the held-out draws.
    pub heldout_log_score: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    pub warm_start: bool,
    /// Mean training log-likelihood after each EM E-step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Tempered<F> {
    log_weight: F,
    chol: Vec<F>,
    log_norm: F,
}

/// A fitted, temperature-scaled Gaussian mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TargetFile<F>", into = "TargetFile<F>")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct LearnedTarget<F: Scalar> {
    form: TargetForm,
    dimension: usize,
    temperature: F,
    components: Vec<Component<F>>,
    metadata: FitMetadata,
    tempered: Vec<Tempered<F>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile<F> {
    format_version: u32,
    form: TargetForm,
    dimension: usize,
    temperature: F,
    components: Vec<Component<F>>,
    metadata: FitMetadata,
}

impl<F: Scalar> TryFrom<TargetFile<F>> for LearnedTarget<F> {
    type Error = Error;

    fn try_from(f: TargetFile<F>) -> Result<Self> {
        if f.format_version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported target format version {}",
                f.format_version
            )));
        }
        LearnedTarget::from_components(f.form, f.dimension, f.components, f.temperature, f.metadata)
    }
}

impl<F: Scalar> From<LearnedTarget<F>> for TargetFile<F> {
    fn from(t: LearnedTarget<F>) -> Self {
        TargetFile {
            format_version: FORMAT_VERSION,
            form: t.form,
            dimension: t.dimension,
            temperature: t.temperature,
            components: t.components,
            metadata: t.metadata,
        }
    }
}

fn check_temperature<F: Scalar>(t: F) -> Result<()> {
    if !(t > F::zero() && t <= F::one()) {
        return Err(Error::input(format!("temperature must lie in (0, 1], got {t}")));
    }
    Ok(())
}

impl<F: Scalar> LearnedTarget<F> {
    /// Assembles a target from explicit parameters (weights are renormalised).
    pub fn from_components(
        form: TargetForm,
        dimension: usize,
        components: Vec<Component<F>>,
        temperature: F,
        metadata: FitMetadata,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        if components.is_empty() {
            return Err(Error::input("a target needs at least one component"));
        }
        let expected = match form {
            TargetForm::SingleGaussian => 1,
            TargetForm::Mixture { components } => components,
        };
        if components.len() != expected {
            return Err(Error::input(format!(
                "form expects {expected} components, got {}",
                components.len()
            )));
        }
        let total: F = components.iter().map(|c| c.weight).sum();
        if !(total > F::zero()) || components.iter().any(|c| !(c.weight >= F::zero())) {
            return Err(Error::input("component weights must be non-negative with a positive sum"));
        }
        let d = F::lit(dimension as f64);
        let half = F::lit(0.5);
        let ln2pi = F::lit((2.0 * PI).ln());
        let mut tempered = Vec::with_capacity(components.len());
        for (k, c) in components.iter().enumerate() {
            check_dim(dimension, c.mean.len())?;
            check_dim(dimension * dimension, c.covariance.len())?;
            let scaled: Vec<F> = c.covariance.iter().map(|&v| v * temperature).collect();
            let chol = cholesky(&scaled, dimension).ok_or_else(|| {
                Error::Fit(format!("component {k} covariance is not positive definite"))
            })?;
            let log_det = log_det_from_cholesky(&chol, dimension);
            tempered.push(Tempered {
                log_weight: (c.weight / total).ln(),
                chol,
                log_norm: -half * (d * ln2pi + log_det),
            });
        }
        let components = components
            .into_iter()
            .map(|c| Component {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(LearnedTarget {
            form,
            dimension,
            temperature,
            components,
            metadata,
            tempered,
        })
    }

    /// Single Gaussian with the given mean and (untempered) covariance.
    pub fn gaussian(mean: Vec<F>, covariance: Vec<F>, temperature: F) -> Result<Self> {
        let dimension = mean.len();
        Self::from_components(
            TargetForm::SingleGaussian,
            dimension,
            vec![Component {
                weight: F::one(),
                mean,
                covariance,
            }],
            temperature,
            FitMetadata::default(),
        )
    }

    pub fn form(&self) -> TargetForm {
        self.form
    }

    pub fn temperature(&self) -> F {
        self.temperature
    }

    pub fn components(&self) -> &[Component<F>] {
        &self.components
    }

    pub fn metadata(&self) -> &FitMetadata {
        &self.metadata
    }

    /// Covariance of component `k` after temperature scaling.
    pub fn tempered_covariance(&self, k: usize) -> Vec<F> {
        self.components[k]
            .covariance
            .iter()
            .map(|&v| v * self.temperature)
            .collect()
    }

    /// Same parameters at a different temperature.
    pub fn with_temperature(&self, temperature: F) -> Result<Self> {
        Self::from_components(
            self.form,
            self.dimension,
            self.components.clone(),
            temperature,
            self.metadata.clone(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("target serialises");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, Some(e.line()), e.to_string()))
    }
}

fn component_log_density<F: Scalar>(
    theta: &[F],
    mean: &[F],
    chol: &[F],
    log_norm: F,
    buf: &mut [F],
) -> F {
    let d = mean.len();
    for i in 0..d {
        buf[i] = theta[i] - mean[i];
    }
    forward_substitute(chol, d, buf);
    let q: F = buf.iter().map(|&z| z * z).sum();
    log_norm - F::lit(0.5) * q
}

impl<F: Scalar> TargetDensity<F> for LearnedTarget<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn log_phi_unchecked(&self, theta: &[F]) -> F {
        let mut buf = vec![F::zero(); self.dimension];
        if self.components.len() == 1 {
            let t = &self.tempered[0];
            return component_log_density(theta, &self.components[0].mean, &t.chol, t.log_norm, &mut buf);
        }
        let terms: Vec<F> = self
            .components
            .iter()
            .zip(&self.tempered)
            .map(|(c, t)| t.log_weight + component_log_density(theta, &c.mean, &t.chol, t.log_norm, &mut buf))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Deterministic interleaved 90/10 split by pooled draw index.
fn split<F: Scalar>(samples: &ChainSet<F>) -> (Vec<&[F]>, Vec<&[F]>) {
    let mut train = Vec::with_capacity(samples.n_draws());
    let mut held = Vec::with_capacity(samples.n_draws() / 10 + 1);
    for (i, d) in samples.iter().enumerate() {
        if i % 10 == 9 {
            held.push(d);
        } else {
            train.push(d);
        }
    }
    (train, held)
}

fn weighted_moments<F: Scalar>(points: &[&[F]], weights: Option<&[F]>, d: usize) -> (Vec<F>, Vec<F>, F) {
    let total: F = match weights {
        Some(w) => w.iter().copied().sum(),
        None => F::lit(points.len() as f64),
    };
    let w_at = |i: usize| weights.map_or(F::one(), |w| w[i]);
    let mut mean = vec![F::zero(); d];
    for (i, p) in points.iter().enumerate() {
        let w = w_at(i);
        for j in 0..d {
            mean[j] += w * p[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = vec![F::zero(); d * d];
    let mut diff = vec![F::zero(); d];
    for (i, p) in points.iter().enumerate() {
        let w = w_at(i);
        for j in 0..d {
            diff[j] = p[j] - mean[j];
        }
        for a in 0..d {
            for b in 0..=a {
                cov[a * d + b] += w * diff[a] * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[a * d + b] / total;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    (mean, cov, total)
}

/// Returns a positive-definite version of `cov`, adding the ridge if allowed.
fn regularise<F: Scalar>(cov: &mut [F], d: usize, opts: &FitOptions) -> Result<Option<f64>> {
    if cholesky(cov, d).is_some() {
        return Ok(None);
    }
    if !opts.ridge {
        return Err(Error::Fit(
            "sample covariance is singular; enable ridge regularisation".into(),
        ));
    }
    let trace: F = (0..d).map(|i| cov[i * d + i]).sum();
    let eps = F::lit(1e-9) * trace / F::lit(d as f64);
    for i in 0..d {
        cov[i * d + i] += eps;
    }
    if !(eps > F::zero()) || cholesky(cov, d).is_none() {
        return Err(Error::Fit(
            "covariance is singular even after ridge regularisation (are all draws identical?)".into(),
        ));
    }
    warn!("singular covariance regularised with ridge {eps}");
    Ok(Some(eps.as_f64()))
}

fn untempered_score<F: Scalar>(target: &LearnedTarget<F>, points: &[&[F]]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    let t1 = target
        .with_temperature(F::one())
        .expect("a fitted target is valid at T = 1");
    points.iter().map(|p| t1.log_phi_unchecked(p).as_f64()).sum::<f64>() / points.len() as f64
}

fn check_fit_input<F: Scalar>(samples: &ChainSet<F>, temperature: F) -> Result<()> {
    check_temperature(temperature)?;
    let need = 10 * samples.dimension();
    if samples.n_draws() < need {
        return Err(Error::input(format!(
            "target fit needs at least {need} draws (10 x dimension), got {}",
            samples.n_draws()
        )));
    }
    Ok(())
}

fn fit_single<F: Scalar>(samples: &ChainSet<F>, temperature: F, opts: &FitOptions, warm: bool) -> Result<LearnedTarget<F>> {
    let d = samples.dimension();
    let (train, held) = split(samples);
    let (mean, mut cov, _) = weighted_moments(&train, None, d);
    let ridge = regularise(&mut cov, d, opts)?;
    let metadata = FitMetadata {
        n_train: train.len(),
        n_heldout: held.len(),
        ridge,
        warm_start: warm,
        converged: true,
        ..Default::default()
    };
    let mut target = LearnedTarget::from_components(
        TargetForm::SingleGaussian,
        d,
        vec![Component {
            weight: F::one(),
            mean,
            covariance: cov,
        }],
        temperature,
        metadata,
    )?;
    target.metadata.heldout_log_score = untempered_score(&target, &held);
    Ok(target)
}

/// k-means++ seeding of `k` means from the training points.
fn seed_means<F: Scalar>(points: &[&[F]], k: usize, seed: u64) -> Vec<Vec<F>> {
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<Vec<F>> = vec![points[rng.random_range(0..points.len())].to_vec()];
    let dist2 = |a: &[F], b: &[F]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| ((x - y) * (x - y)).as_f64()).sum()
    };
    while means.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| means.iter().map(|m| dist2(p, m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            means.push(points[rng.random_range(0..points.len())].to_vec());
            continue;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, v) in d2.iter().enumerate() {
            if u < *v {
                pick = i;
                break;
            }
            u -= v;
        }
        means.push(points[pick].to_vec());
    }
    means
}

fn run_em<F: Scalar>(
    train: &[&[F]],
    mut comps: Vec<Component<F>>,
    opts: &FitOptions,
) -> Result<(Vec<Component<F>>, usize, bool, Vec<f64>, Option<f64>)> {
    let d = comps[0].mean.len();
    let k = comps.len();
    let n = train.len();
    let mut resp = vec![F::zero(); n * k];
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut ridge = None;
    let mut buf = vec![F::zero(); d];
    let mut terms = vec![F::zero(); k];
    loop {
        // E-step
        let prepared: Vec<(F, Vec<F>, F)> = comps
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let chol = cholesky(&c.covariance, d)
                    .ok_or_else(|| Error::Fit(format!("component {j} lost positive definiteness")))?;
                let log_norm = -F::lit(0.5) * (F::lit(d as f64 * (2.0 * PI).ln()) + log_det_from_cholesky(&chol, d));
                Ok((c.weight.ln(), chol, log_norm))
            })
            .collect::<Result<_>>()?;
        let mut ll = 0.0f64;
        for (i, p) in train.iter().enumerate() {
            for (j, (lw, chol, ln)) in prepared.iter().enumerate() {
                terms[j] = *lw + component_log_density(p, &comps[j].mean, chol, *ln, &mut buf);
            }
            let total = log_sum_exp(&terms);
            ll += total.as_f64();
            for j in 0..k {
                resp[i * k + j] = (terms[j] - total).exp();
            }
        }
        ll /= n as f64;
        trace.push(ll);
        if (ll - prev).abs() < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        prev = ll;
        // M-step
        for j in 0..k {
            let w: Vec<F> = (0..n).map(|i| resp[i * k + j]).collect();
            let nk: F = w.iter().copied().sum();
            if !(nk.as_f64() > 1e-10 * n as f64) {
                // empty component: leave its parameters and give it negligible weight
                comps[j].weight = F::lit(1e-300).max(F::min_positive_value());
                continue;
            }
            let (mean, mut cov, _) = weighted_moments(train, Some(&w), d);
            if let Some(eps) = regularise(&mut cov, d, opts)? {
                ridge = Some(eps);
            }
            comps[j] = Component {
                weight: nk / F::lit(n as f64),
                mean,
                covariance: cov,
            };
        }
        iterations += 1;
    }
    Ok((comps, iterations, converged, trace, ridge))
}

fn fit_mixture<F: Scalar>(
    samples: &ChainSet<F>,
    init: Option<&[Component<F>]>,
    k: usize,
    temperature: F,
    seed: u64,
    opts: &FitOptions,
) -> Result<LearnedTarget<F>> {
    let d = samples.dimension();
    let (train, held) = split(samples);
    let comps = match init {
        Some(c) => c.to_vec(),
        None => {
            let (_, mut global, _) = weighted_moments(&train, None, d);
            regularise(&mut global, d, opts)?;
            seed_means(&train, k, seed)
                .into_iter()
                .map(|mean| Component {
                    weight: F::one() / F::lit(k as f64),
                    mean,
                    covariance: global.clone(),
                })
                .collect()
        }
    };
    let (comps, iterations, converged, trace, ridge) = run_em(&train, comps, opts)?;
    let metadata = FitMetadata {
        n_train: train.len(),
        n_heldout: held.len(),
        iterations,
        converged,
        ridge,
        warm_start: init.is_some(),
        log_likelihood_trace: trace,
        ..Default::default()
    };
    let mut target =
        LearnedTarget::from_components(TargetForm::Mixture { components: k }, d, comps, temperature, metadata)?;
    target.metadata.heldout_log_score = untempered_score(&target, &held);
    Ok(target)
}

/// Fits a target of the given form to posterior draws and tempers it.
pub fn fit_target<F: Scalar>(
    samples: &ChainSet<F>,
    form: TargetForm,
    temperature: F,
    seed: u64,
    opts: &FitOptions,
) -> Result<LearnedTarget<F>> {
    check_fit_input(samples, temperature)?;
    match form {
        TargetForm::SingleGaussian => fit_single(samples, temperature, opts, false),
        TargetForm::Mixture { components } => {
            if components == 0 {
                return Err(Error::input("a mixture needs at least one component"));
            }
            fit_mixture(samples, None, components, temperature, seed, opts)
        }
    }
}

/// Fits according to a [`TargetChoice`]; mixtures pick K in {1, 2, 3} by
/// best held-out log score (ties go to the smaller K).
pub fn fit_target_auto<F: Scalar>(
    samples: &ChainSet<F>,
    choice: TargetChoice,
    temperature: F,
    seed: u64,
    opts: &FitOptions,
) -> Result<LearnedTarget<F>> {
    match choice {
        TargetChoice::Gaussian => fit_target(samples, TargetForm::SingleGaussian, temperature, seed, opts),
        TargetChoice::Mixture => {
            let mut best: Option<LearnedTarget<F>> = None;
            for k in 1..=3 {
                let t = fit_target(samples, TargetForm::Mixture { components: k }, temperature, seed, opts)?;
                let better = match &best {
                    None => true,
                    Some(b) => t.metadata.heldout_log_score > b.metadata.heldout_log_score,
                };
                if better {
                    best = Some(t);
                }
            }
            Ok(best.expect("at least one candidate"))
        }
    }
}

/// Refits `previous` on new draws, warm-starting EM from its parameters and
/// keeping its form and temperature.
pub fn refit_target<F: Scalar>(
    previous: &LearnedTarget<F>,
    samples: &ChainSet<F>,
    opts: &FitOptions,
) -> Result<LearnedTarget<F>> {
    check_dim(previous.dimension, samples.dimension())?;
    check_fit_input(samples, previous.temperature)?;
    match previous.form {
        TargetForm::SingleGaussian => fit_single(samples, previous.temperature, opts, true),
        TargetForm::Mixture { components } => fit_mixture(
            samples,
            Some(&previous.components),
            components,
            previous.temperature,
            0,
            opts,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;
    use rand_distr::StandardNormal;

    fn normal_draws(n: usize, d: usize, shift: f64, seed: u64) -> ChainSet<f64> {
        let mut rng = rng_from_seed(seed);
        let v: Vec<f64> = (0..n * d)
            .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
            .collect();
        ChainSet::new(d, vec![v]).unwrap()
    }

    fn bimodal(n: usize, seed: u64) -> ChainSet<f64> {
        let mut rng = rng_from_seed(seed);
        let v: Vec<f64> = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { -3.0 } else { 3.0 };
                c + 0.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        ChainSet::new(1, vec![v]).unwrap()
    }

    const OPTS: FitOptions = FitOptions {
        ridge: true,
        max_iter: 500,
        tol: 1e-8,
    };

    #[test]
    fn moment_matching_on_standard_normal() {
        let cs = normal_draws(20_000, 2, 0.0, 1);
        let t = fit_target(&cs, TargetForm::SingleGaussian, 1.0, 0, &OPTS).unwrap();
        let c = &t.components()[0];
        let n = t.metadata().n_train as f64;
        for j in 0..2 {
            assert!(c.mean[j].abs() < 4.0 / n.sqrt());
            assert!((c.covariance[j * 2 + j] - 1.0).abs() < 0.1);
        }
        assert!(c.covariance[1].abs() < 0.1);
        assert_eq!(t.metadata().n_heldout, 2000);
        assert!(t.metadata().heldout_log_score.is_finite());
    }

    #[test]
    fn temperature_scales_covariance() {
        let cs = normal_draws(5000, 2, 0.0, 2);
        let a = fit_target(&cs, TargetForm::SingleGaussian, 1.0, 0, &OPTS).unwrap();
        let b = fit_target(&cs, TargetForm::SingleGaussian, 0.5, 0, &OPTS).unwrap();
        let (ca, cb) = (a.tempered_covariance(0), b.tempered_covariance(0));
        for (x, y) in ca.iter().zip(&cb) {
            assert!((y - 0.5 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn bimodal_mixture_recovers_modes() {
        let cs = bimodal(4000, 3);
        let t = fit_target(&cs, TargetForm::Mixture { components: 2 }, 1.0, 7, &OPTS).unwrap();
        let mut means: Vec<f64> = t.components().iter().map(|c| c.mean[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] + 3.0).abs() < 0.2 && (means[1] - 3.0).abs() < 0.2, "{means:?}");
        assert!(t.metadata().converged);
    }

    #[test]
    fn auto_mixture_prefers_two_components_on_bimodal_draws() {
        let cs = bimodal(4000, 4);
        let t = fit_target_auto(&cs, TargetChoice::Mixture, 0.8, 1, &OPTS).unwrap();
        assert_ne!(t.form(), TargetForm::Mixture { components: 1 });
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let cs = bimodal(3000, 5);
        let t = fit_target(&cs, TargetForm::Mixture { components: 3 }, 1.0, 2, &OPTS).unwrap();
        let trace = &t.metadata().log_likelihood_trace;
        assert!(trace.len() > 2);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn log_phi_examples() {
        let t = LearnedTarget::gaussian(vec![0.0], vec![1.0], 1.0).unwrap();
        let expect = -0.5 * (2.0 * PI).ln();
        assert!((t.log_phi(&[0.0]).unwrap() - expect).abs() < 1e-15);
        let m = LearnedTarget::from_components(
            TargetForm::Mixture { components: 1 },
            1,
            t.components().to_vec(),
            1.0,
            FitMetadata::default(),
        )
        .unwrap();
        assert_eq!(m.log_phi(&[0.3]).unwrap(), t.log_phi(&[0.3]).unwrap());
        let cold = t.with_temperature(0.25).unwrap();
        assert!((cold.log_phi(&[0.0]).unwrap() - (-0.5 * (2.0 * PI * 0.25).ln())).abs() < 1e-14);
        assert!(t.log_phi(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn normalised_on_grids() {
        let t1 = fit_target(&bimodal(2000, 6), TargetForm::Mixture { components: 2 }, 0.8, 3, &OPTS).unwrap();
        let (lo, hi, n) = (-15.0, 15.0, 30_000);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| t1.log_phi(&[lo + (i as f64 + 0.5) * h]).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");

        let cov = vec![1.0, 0.6, 0.6, 2.0];
        let t2 = LearnedTarget::gaussian(vec![0.5, -0.5], cov, 0.7).unwrap();
        let (lo, hi, n) = (-9.0, 9.0, 900);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                total += t2.log_phi(&x).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn thinner_tails_than_the_fit() {
        let cs = normal_draws(4000, 1, 0.0, 8);
        let fit = fit_target(&cs, TargetForm::SingleGaussian, 1.0, 0, &OPTS).unwrap();
        let cold = fit_target(&cs, TargetForm::SingleGaussian, 0.8, 0, &OPTS).unwrap();
        let sd = fit.components()[0].covariance[0].sqrt();
        let mu = fit.components()[0].mean[0];
        let ratio = |r: f64| (cold.log_phi(&[mu + r * sd]).unwrap() - fit.log_phi(&[mu + r * sd]).unwrap()).exp();
        assert!(ratio(10.0) < ratio(5.0));
        assert!(ratio(5.0) < ratio(1.0));
    }

    #[test]
    fn temperature_bounds() {
        let cs = normal_draws(200, 1, 0.0, 9);
        assert!(fit_target(&cs, TargetForm::SingleGaussian, 1.5, 0, &OPTS).is_err());
        assert!(fit_target(&cs, TargetForm::SingleGaussian, 0.0, 0, &OPTS).is_err());
        assert!(LearnedTarget::gaussian(vec![0.0], vec![1.0], 1.01).is_err());
    }

    #[test]
    fn too_few_draws() {
        let cs = normal_draws(19, 2, 0.0, 10);
        assert!(matches!(
            fit_target(&cs, TargetForm::SingleGaussian, 0.8, 0, &OPTS),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn singular_covariance() {
        // all draws on the line y = 2x
        let v: Vec<f64> = (0..100).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        let cs = ChainSet::new(2, vec![v]).unwrap();
        let strict = FitOptions { ridge: false, ..OPTS };
        assert!(matches!(
            fit_target(&cs, TargetForm::SingleGaussian, 0.8, 0, &strict),
            Err(Error::Fit(_))
        ));
        let t = fit_target(&cs, TargetForm::SingleGaussian, 0.8, 0, &OPTS).unwrap();
        assert!(t.metadata().ridge.is_some());
        let same = ChainSet::new(1, vec![vec![1.0; 50]]).unwrap();
        assert!(fit_target(&same, TargetForm::SingleGaussian, 0.8, 0, &OPTS).is_err());
    }

    #[test]
    fn refit_fixed_point_and_shift() {
        let cs = normal_draws(5000, 2, 0.0, 11);
        let cold = fit_target(&cs, TargetForm::SingleGaussian, 0.8, 0, &OPTS).unwrap();
        let again = refit_target(&cold, &cs, &OPTS).unwrap();
        for (a, b) in cold.components()[0].covariance.iter().zip(&again.components()[0].covariance) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(again.metadata().warm_start);
        assert_eq!(again.temperature(), 0.8);

        let shifted = normal_draws(5000, 2, 1.0, 11);
        let moved = refit_target(&cold, &shifted, &OPTS).unwrap();
        for j in 0..2 {
            let delta = moved.components()[0].mean[j] - cold.components()[0].mean[j];
            assert!((delta - 1.0).abs() < 1e-9, "{delta}");
        }

        let wrong = normal_draws(100, 3, 0.0, 12);
        assert!(matches!(refit_target(&cold, &wrong, &OPTS), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mixture_refit_is_a_fixed_point_and_warm_start_is_fast() {
        let cs = bimodal(4000, 13);
        let cold = fit_target(&cs, TargetForm::Mixture { components: 2 }, 0.8, 5, &OPTS).unwrap();
        let warm = refit_target(&cold, &cs, &OPTS).unwrap();
        for (a, b) in cold.components().iter().zip(warm.components()) {
            assert!((a.mean[0] - b.mean[0]).abs() < 1e-6);
            assert!((a.covariance[0] - b.covariance[0]).abs() < 1e-6);
            assert!((a.weight - b.weight).abs() < 1e-6);
        }
        let other = bimodal(4000, 14);
        let warm = refit_target(&cold, &other, &OPTS).unwrap();
        let cold2 = fit_target(&other, TargetForm::Mixture { components: 2 }, 0.8, 5, &OPTS).unwrap();
        assert!(warm.metadata().iterations <= cold2.metadata().iterations);
    }

    #[test]
    fn file_round_trip() {
        let cs = bimodal(2000, 15);
        let t = fit_target(&cs, TargetForm::Mixture { components: 2 }, 0.8, 5, &OPTS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("target.json");
        t.save(&path).unwrap();
        let back = LearnedTarget::<f64>::load(&path).unwrap();
        for x in [-3.0, 0.1, 2.9] {
            assert_eq!(back.log_phi(&[x]).unwrap(), t.log_phi(&[x]).unwrap());
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"format_version\": 1"));
        assert!(text.contains("\"temperature\": 0.8"));
    }

    #[test]
    fn single_precision_fit() {
        let mut rng = rng_from_seed(16);
        let v: Vec<f32> = (0..4000).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let cs = ChainSet::new(1, vec![v]).unwrap();
        let t = fit_target(&cs, TargetForm::SingleGaussian, 0.8f32, 0, &FitOptions::default()).unwrap();
        assert!((t.components()[0].covariance[0] - 1.0).abs() < 0.1);
    }
}
