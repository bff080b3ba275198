//! Prior sensitivity by importance resampling: weights, diagnostics, the
//! reuse / retrain / refit decision, and the evidence under the alternative
//! prior computed from resampled draws.
//!
//! Likelihood values are computed once per original draw when a
//! [`SensitivityContext`] is built; resampled draws are copies of original
//! draws, so every later step only looks those values up.

use std::path::Path;
use std::time::Instant;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{decide, Decision, ImportanceWeights, ParetoK, Thresholds, WeightSummary, DEFAULT_DEGENERATE_TOL};
use crate::error::{check_dim, Error, Result};
use crate::evidence::{
    check_bootstrap, estimate_from_log_ratios, log_likelihoods, log_ratios, replicate_warnings, Bootstrap,
    EvidenceEstimate, EvidenceProvenance,
};
use crate::math::{rng_from_seed, sample_std, sub_seed};
use crate::model::{DensityModel, Prior, PriorSpec};
use crate::samples::{partition, resample_indices, ChainSet, ResampleScheme};
use crate::scalar::Scalar;
use crate::target::{refit_target, FitOptions, LearnedTarget, TargetDensity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityPolicy {
    pub thresholds: Thresholds,
    pub seed: u64,
    pub scheme: ResampleScheme,
    /// Bootstrap replicates over original chains for resampled estimates;
    /// `None` keeps the per-chain standard error.
    pub bootstrap: Option<usize>,
    pub degenerate_tol: f64,
    pub fit: FitOptions,
}

impl Default for SensitivityPolicy {
    fn default() -> Self {
        SensitivityPolicy {
            thresholds: Thresholds::default(),
            seed: 0,
            scheme: ResampleScheme::Multinomial,
            bootstrap: Some(30),
            degenerate_tol: DEFAULT_DEGENERATE_TOL,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetProvenance {
    Reused,
    Retrained { iterations: usize, converged: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct SensitivityEntry<F: Scalar> {
    pub index: usize,
    pub prior: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_spec: Option<PriorSpec<F>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceEstimate<F>>,
    /// log Z under this prior minus the original log Z.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_log_z: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetProvenance>,
    /// Pareto-k̂ of every bootstrap replicate's weights.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicate_pareto_k: Vec<ParetoK<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct SensitivityReport<F: Scalar> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<EvidenceEstimate<F>>,
    pub thresholds: Thresholds,
    pub entries: Vec<SensitivityEntry<F>>,
}

/// One flat row per alternative prior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub prior: String,
    pub ess: Option<f64>,
    pub ess_fraction: Option<f64>,
    pub pareto_k: String,
    pub action: String,
    pub target: String,
    pub log_z: Option<f64>,
    pub sigma_log_z: Option<f64>,
    pub delta_log_z: Option<f64>,
    pub log_z_true: Option<f64>,
    pub percent_error: Option<f64>,
    pub error: String,
}

/// `100 (estimate - truth) / |truth|`.
pub fn percent_error(estimate: f64, truth: f64) -> f64 {
    100.0 * (estimate - truth) / truth.abs()
}

impl<F: Scalar> SensitivityReport<F> {
    /// CSV rows; `truth[i]` (if given) fills the oracle and percent-error columns.
    pub fn rows(&self, truth: Option<&[f64]>) -> Vec<SweepRow> {
        self.entries
            .iter()
            .map(|e| {
                let log_z = e.evidence.as_ref().map(|v| v.log_z.as_f64());
                let log_z_true = truth.and_then(|t| t.get(e.index).copied()).filter(|v| v.is_finite());
                SweepRow {
                    index: e.index,
                    prior: e.prior.clone(),
                    ess: e.weights.as_ref().map(|w| w.ess),
                    ess_fraction: e.weights.as_ref().map(|w| w.ess_fraction),
                    pareto_k: e.weights.as_ref().map_or(String::new(), |w| w.pareto_k.to_string()),
                    action: e.decision.as_ref().map_or(String::new(), |d| d.action.as_str().to_string()),
                    target: match &e.target {
                        None => String::new(),
                        Some(TargetProvenance::Reused) => "reused".into(),
                        Some(TargetProvenance::Retrained { .. }) => "retrained".into(),
                    },
                    log_z,
                    sigma_log_z: e.evidence.as_ref().map(|v| v.sigma_log_z.as_f64()),
                    delta_log_z: e.delta_log_z.map(|v| v.as_f64()),
                    log_z_true,
                    percent_error: log_z.zip(log_z_true).map(|(a, b)| percent_error(a, b)),
                    error: e.error.clone().unwrap_or_default(),
                }
            })
            .collect()
    }
}

pub fn write_rows_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, None, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, None, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Original draws with their cached log-likelihood and log prior values.
pub struct SensitivityContext<'a, F: Scalar> {
    samples: &'a ChainSet<F>,
    prior0: &'a dyn DensityModel<F>,
    target0: &'a LearnedTarget<F>,
    log_lik: Vec<F>,
    log_p0: Vec<F>,
}

impl<'a, F: Scalar> SensitivityContext<'a, F> {
    /// Evaluates the likelihood once at every original draw.
    pub fn new(
        samples: &'a ChainSet<F>,
        prior0: &'a dyn DensityModel<F>,
        likelihood: &dyn DensityModel<F>,
        target0: &'a LearnedTarget<F>,
    ) -> Result<Self> {
        let log_lik = log_likelihoods(samples, likelihood)?;
        Self::with_log_likelihoods(samples, prior0, log_lik, target0)
    }

    /// Uses log-likelihoods that were already computed (in pooled order).
    pub fn with_log_likelihoods(
        samples: &'a ChainSet<F>,
        prior0: &'a dyn DensityModel<F>,
        log_lik: Vec<F>,
        target0: &'a LearnedTarget<F>,
    ) -> Result<Self> {
        check_dim(prior0.dimension(), samples.dimension())?;
        check_dim(target0.dimension(), samples.dimension())?;
        if log_lik.len() != samples.n_draws() {
            return Err(Error::input("one log-likelihood per draw is required"));
        }
        let log_p0 = prior_values(samples, prior0);
        if let Some(i) = log_p0.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "draw {i} has zero density under the original prior it was sampled from"
            )));
        }
        Ok(SensitivityContext {
            samples,
            prior0,
            target0,
            log_lik,
            log_p0,
        })
    }

    pub fn log_likelihoods(&self) -> &[F] {
        &self.log_lik
    }

    /// Direct estimate under the original prior and target.
    pub fn original_evidence(&self, bootstrap: Option<usize>, seed: u64) -> Result<EvidenceEstimate<F>> {
        let lr = log_ratios(self.samples, self.prior0, &self.log_lik, self.target0)?;
        let sizes = self.samples.chain_lengths();
        let est = estimate_from_log_ratios(&lr, &sizes, EvidenceProvenance::Direct)?;
        match bootstrap {
            Some(r) if sizes.len() >= 2 => {
                let b = crate::evidence::bootstrap_from_log_ratios(&lr, &sizes, r, sub_seed(seed, "bootstrap-original", 0))?;
                Ok(est.with_bootstrap(b))
            }
            _ => Ok(est),
        }
    }

    /// Prior-ratio importance weights of the original draws under `prior1`.
    pub fn weights(&self, prior1: &dyn DensityModel<F>, degenerate_tol: F) -> Result<ImportanceWeights<F>> {
        check_dim(prior1.dimension(), self.samples.dimension())?;
        let lp1 = prior_values(self.samples, prior1);
        let lw = lp1.iter().zip(&self.log_p0).map(|(&a, &b)| a - b).collect();
        ImportanceWeights::from_log_weights(lw, degenerate_tol)
    }

    /// `log phi1 - log L - log p1` at every original draw with positive weight
    /// (`+inf` marks draws that can never be resampled).
    fn draw_log_ratios(
        &self,
        prior1: &dyn DensityModel<F>,
        target1: &dyn TargetDensity<F>,
        weights: &ImportanceWeights<F>,
    ) -> Result<Vec<F>> {
        let lw = weights.log_weights();
        let out: Vec<F> = (0..self.samples.n_draws())
            .into_par_iter()
            .map(|i| {
                if lw[i] == F::neg_infinity() {
                    return F::infinity();
                }
                let d = self.samples.pooled(i);
                target1.log_phi_unchecked(d) - self.log_lik[i] - prior1.log_density_unchecked(d)
            })
            .collect();
        if let Some(i) = out.iter().position(|v| v.is_nan()) {
            return Err(Error::Data(format!("log ratio of draw {i} is NaN")));
        }
        Ok(out)
    }

    /// Evidence under `prior1` from SIR-resampled draws with target `target1`.
    pub fn resampled_evidence(
        &self,
        prior1: &dyn DensityModel<F>,
        target1: &dyn TargetDensity<F>,
        weights: &ImportanceWeights<F>,
        seed: u64,
        scheme: ResampleScheme,
    ) -> Result<EvidenceEstimate<F>> {
        check_dim(target1.dimension(), self.samples.dimension())?;
        if weights.len() != self.samples.n_draws() {
            return Err(Error::input("weights do not match the draws"));
        }
        let lr = self.draw_log_ratios(prior1, target1, weights)?;
        let mut rng = rng_from_seed(seed);
        let idx = resample_indices(weights.normalized(), self.samples.n_draws(), scheme, &mut rng)?;
        let picked: Vec<F> = idx.iter().map(|&i| lr[i]).collect();
        estimate_from_log_ratios(&picked, &self.samples.chain_lengths(), EvidenceProvenance::Resampled)
    }

    /// Bootstrap over original chains: every replicate redraws whole chains,
    /// renormalises the weights, resamples and recomputes log Z with
    /// `target1` held fixed.
    fn resampled_bootstrap(
        &self,
        lr: &[F],
        weights: &ImportanceWeights<F>,
        replicates: usize,
        seed: u64,
        policy: &SensitivityPolicy,
    ) -> Result<(Bootstrap<F>, Vec<ParetoK<f64>>)> {
        let sizes = self.samples.chain_lengths();
        let offsets = self.samples.offsets();
        check_bootstrap(sizes.len(), replicates)?;
        let mut warnings = replicate_warnings(replicates);
        let tol = F::lit(policy.degenerate_tol);
        let results: Vec<Option<(F, ParetoK<f64>)>> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_from_seed(sub_seed(seed, "bootstrap", r as u64));
                let c = sizes.len();
                let chosen: Vec<usize> = (0..c).map(|_| rng.random_range(0..c)).collect();
                let pool: Vec<usize> = chosen
                    .iter()
                    .flat_map(|&j| offsets[j]..offsets[j] + sizes[j])
                    .collect();
                let rep_sizes: Vec<usize> = chosen.iter().map(|&j| sizes[j]).collect();
                let lw: Vec<F> = pool.iter().map(|&i| weights.log_weights()[i]).collect();
                let w = ImportanceWeights::from_log_weights(lw, tol).ok()?;
                let k = w.pareto_k().to_f64();
                let idx = resample_indices(w.normalized(), pool.len(), policy.scheme, &mut rng).ok()?;
                let picked: Vec<F> = idx.iter().map(|&i| lr[pool[i]]).collect();
                let sizes = partition(&rep_sizes, pool.len());
                let est = estimate_from_log_ratios(&picked, &sizes, EvidenceProvenance::Resampled).ok()?;
                Some((est.log_z, k))
            })
            .collect();
        let failed = results.iter().filter(|r| r.is_none()).count();
        if failed > 0 {
            let msg = format!("{failed} of {replicates} bootstrap replicates had no usable weights");
            warn!("{msg}");
            warnings.push(msg);
        }
        let (replicate_log_z, ks): (Vec<F>, Vec<ParetoK<f64>>) = results.into_iter().flatten().unzip();
        if replicate_log_z.len() < 2 {
            return Err(Error::DegenerateWeights("too few usable bootstrap replicates".into()));
        }
        Ok((
            Bootstrap {
                sigma: sample_std(&replicate_log_z),
                replicate_log_z,
                warnings,
            },
            ks,
        ))
    }

    /// Runs the full workflow for one alternative prior. Failures are
    /// recorded in the entry rather than returned.
    pub fn analyse(
        &self,
        index: usize,
        description: &str,
        prior1: &dyn DensityModel<F>,
        original_log_z: Option<F>,
        policy: &SensitivityPolicy,
    ) -> SensitivityEntry<F> {
        let start = Instant::now();
        let mut entry = SensitivityEntry {
            index,
            prior: description.to_string(),
            prior_spec: None,
            weights: None,
            decision: None,
            evidence: None,
            delta_log_z: None,
            target: None,
            replicate_pareto_k: Vec::new(),
            error: None,
            elapsed_seconds: 0.0,
        };
        if let Err(e) = self.analyse_into(&mut entry, prior1, original_log_z, policy) {
            warn!("alternative prior {index} ({description}): {e}");
            entry.error = Some(e.to_string());
        }
        entry.elapsed_seconds = start.elapsed().as_secs_f64();
        entry
    }

    fn analyse_into(
        &self,
        entry: &mut SensitivityEntry<F>,
        prior1: &dyn DensityModel<F>,
        original_log_z: Option<F>,
        policy: &SensitivityPolicy,
    ) -> Result<()> {
        let weights = self.weights(prior1, F::lit(policy.degenerate_tol))?;
        entry.weights = Some(weights.summary());
        let decision = decide(weights.pareto_k(), weights.ess_fraction(), policy.thresholds);
        let action = decision.action;
        entry.decision = Some(decision);

        use crate::diagnostics::Action;
        let index = entry.index as u64;
        let retrained;
        let target1: &LearnedTarget<F> = match action {
            Action::RefitRequired => return Ok(()),
            Action::ReuseTarget => {
                entry.target = Some(TargetProvenance::Reused);
                self.target0
            }
            Action::RetrainTarget => {
                let mut rng = rng_from_seed(sub_seed(policy.seed, "retrain-draws", index));
                let n = self.samples.n_draws();
                let idx = resample_indices(weights.normalized(), n, policy.scheme, &mut rng)?;
                let draws = self.samples.gather(&idx, &self.samples.chain_lengths())?;
                retrained = refit_target(self.target0, &draws, &policy.fit)?;
                entry.target = Some(TargetProvenance::Retrained {
                    iterations: retrained.metadata().iterations,
                    converged: retrained.metadata().converged,
                });
                &retrained
            }
        };

        let lr = self.draw_log_ratios(prior1, target1, &weights)?;
        let mut rng = rng_from_seed(sub_seed(policy.seed, "sir", index));
        let idx = resample_indices(weights.normalized(), self.samples.n_draws(), policy.scheme, &mut rng)?;
        let picked: Vec<F> = idx.iter().map(|&i| lr[i]).collect();
        let mut est = estimate_from_log_ratios(&picked, &self.samples.chain_lengths(), EvidenceProvenance::Resampled)?;
        if let Some(r) = policy.bootstrap {
            if self.samples.n_chains() >= 2 {
                let (b, ks) = self.resampled_bootstrap(&lr, &weights, r, sub_seed(policy.seed, "entry-bootstrap", index), policy)?;
                est = est.with_bootstrap(b);
                entry.replicate_pareto_k = ks;
            } else {
                est.warnings.push("single chain: bootstrap over chains unavailable".into());
            }
        }
        entry.delta_log_z = original_log_z.map(|z| est.log_z - z);
        entry.evidence = Some(est);
        Ok(())
    }

    /// Analyses every prior independently against the original draws.
    pub fn sweep(&self, priors: &[PriorSpec<F>], policy: &SensitivityPolicy) -> Result<SensitivityReport<F>> {
        if priors.is_empty() {
            return Err(Error::input("the sweep needs at least one alternative prior"));
        }
        let original = self.original_evidence(None, policy.seed)?;
        let z0 = original.log_z;
        let entries = priors
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut entry = match Prior::new(spec.clone()) {
                    Ok(p) => self.analyse(i, &spec.describe(), &p, Some(z0), policy),
                    Err(e) => SensitivityEntry {
                        index: i,
                        prior: spec.describe(),
                        prior_spec: None,
                        weights: None,
                        decision: None,
                        evidence: None,
                        delta_log_z: None,
                        target: None,
                        replicate_pareto_k: Vec::new(),
                        error: Some(e.to_string()),
                        elapsed_seconds: 0.0,
                    },
                };
                entry.prior_spec = Some(spec.clone());
                entry
            })
            .collect();
        Ok(SensitivityReport {
            original: Some(original),
            thresholds: policy.thresholds,
            entries,
        })
    }
}

fn prior_values<F: Scalar>(samples: &ChainSet<F>, prior: &dyn DensityModel<F>) -> Vec<F> {
    let per_chain: Vec<Vec<F>> = (0..samples.n_chains())
        .into_par_iter()
        .map(|c| samples.chain_draws(c).map(|d| prior.log_density_unchecked(d)).collect())
        .collect();
    per_chain.into_iter().flatten().collect()
}

/// Evidence under `prior1` from resampled draws, caching the likelihood at
/// the original draws first.
pub fn resampled_evidence<F: Scalar>(
    samples: &ChainSet<F>,
    prior0: &dyn DensityModel<F>,
    prior1: &dyn DensityModel<F>,
    likelihood: &dyn DensityModel<F>,
    target0: &LearnedTarget<F>,
    target1: &dyn TargetDensity<F>,
    weights: &ImportanceWeights<F>,
    seed: u64,
) -> Result<EvidenceEstimate<F>> {
    let ctx = SensitivityContext::new(samples, prior0, likelihood, target0)?;
    ctx.resampled_evidence(prior1, target1, weights, seed, ResampleScheme::Multinomial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::Action;
    use crate::model::{Counted, ToyLikelihood};
    use crate::target::{fit_target, TargetForm};
    use rand_distr::StandardNormal;

    fn gaussian_posterior(sd: f64, chains: usize, per: usize, seed: u64) -> ChainSet<f64> {
        let mut rng = rng_from_seed(seed);
        ChainSet::new(
            1,
            (0..chains)
                .map(|_| (0..per).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect(),
        )
        .unwrap()
    }

    fn fitted(cs: &ChainSet<f64>) -> LearnedTarget<f64> {
        fit_target(cs, TargetForm::SingleGaussian, 0.8, 0, &FitOptions::default()).unwrap()
    }

    #[test]
    fn no_likelihood_calls_after_caching() {
        let cs = gaussian_posterior(0.5 / 1.25f64.sqrt(), 4, 500, 1);
        let prior0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let lik = Counted::new(ToyLikelihood::gaussian(1, 0.5).unwrap());
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        assert_eq!(lik.calls(), 2000);
        let policy = SensitivityPolicy::default();
        let wide = ctx.analyse(0, "wide", &Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.1)).unwrap(), None, &policy);
        let narrow = ctx.analyse(1, "narrow", &Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 0.4)).unwrap(), None, &policy);
        assert_eq!(wide.decision.unwrap().action, Action::ReuseTarget);
        assert_eq!(narrow.decision.unwrap().action, Action::RetrainTarget);
        assert!(wide.evidence.is_some() && narrow.evidence.is_some());
        assert_eq!(lik.calls(), 2000);
    }

    #[test]
    fn identical_prior_reproduces_direct_estimate() {
        let cs = gaussian_posterior(0.5 / 1.25f64.sqrt(), 8, 1000, 2);
        let prior0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let lik = ToyLikelihood::gaussian(1, 0.5).unwrap();
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        let report = ctx
            .sweep(&[PriorSpec::isotropic_gaussian(1, 0.0, 1.0)], &SensitivityPolicy::default())
            .unwrap();
        let e = &report.entries[0];
        assert_eq!(e.decision.as_ref().unwrap().action, Action::ReuseTarget);
        assert_eq!(e.weights.as_ref().unwrap().ess_fraction, 1.0);
        let est = e.evidence.as_ref().unwrap();
        let direct = report.original.as_ref().unwrap();
        let sigma = est.sigma_log_z.max(direct.sigma_log_z);
        assert!(e.delta_log_z.unwrap().abs() < 2.0 * sigma, "{:?} vs {sigma}", e.delta_log_z);
        assert_eq!(e.replicate_pareto_k.len(), 30);
    }

    #[test]
    fn truncation_shifts_evidence_by_normalisation_ratio() {
        let cs = gaussian_posterior(1.0, 8, 2000, 3);
        let prior0 = Prior::new(PriorSpec::uniform(vec![-10.0], vec![10.0])).unwrap();
        let prior1 = Prior::new(PriorSpec::uniform(vec![-5.0], vec![5.0])).unwrap();
        let lik = ToyLikelihood::gaussian(1, 1.0).unwrap();
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        let z0 = ctx.original_evidence(Some(30), 0).unwrap();
        let e = ctx.analyse(0, "box", &prior1, Some(z0.log_z), &SensitivityPolicy::default());
        let est = e.evidence.unwrap();
        let sigma = (est.sigma_log_z.powi(2) + z0.sigma_log_z.powi(2)).sqrt();
        let delta = e.delta_log_z.unwrap();
        assert!((delta - 2f64.ln()).abs() < 2.0 * sigma, "{delta} ± {sigma}");
    }

    #[test]
    fn disjoint_and_invalid_priors_are_isolated() {
        let cs = gaussian_posterior(0.3, 2, 200, 4);
        let prior0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let lik = ToyLikelihood::gaussian(1, 0.3).unwrap();
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        let priors = vec![
            PriorSpec::uniform(vec![50.0], vec![60.0]),
            PriorSpec::uniform(vec![1.0], vec![0.0]),
            PriorSpec::isotropic_gaussian(1, 0.0, 1.0),
        ];
        let report = ctx.sweep(&priors, &SensitivityPolicy::default()).unwrap();
        assert!(report.entries[0].error.as_ref().unwrap().contains("disjoint"));
        assert!(report.entries[0].weights.is_none());
        assert!(report.entries[1].error.is_some());
        assert!(report.entries[2].evidence.is_some());
        assert!(ctx.sweep(&[], &SensitivityPolicy::default()).is_err());
    }

    #[test]
    fn refit_entries_carry_no_evidence() {
        let cs = gaussian_posterior(1.0, 4, 1000, 5);
        let prior0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 100.0)).unwrap();
        let lik = ToyLikelihood::gaussian(1, 1.0).unwrap();
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        let e = ctx.analyse(0, "tiny", &Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 0.01)).unwrap(), None, &SensitivityPolicy::default());
        assert_eq!(e.decision.unwrap().action, Action::RefitRequired);
        assert!(e.evidence.is_none() && e.target.is_none() && e.error.is_none());
    }

    #[test]
    fn reports_are_deterministic_apart_from_timing() {
        let cs = gaussian_posterior(0.4, 4, 500, 6);
        let prior0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let lik = ToyLikelihood::gaussian(1, 0.45).unwrap();
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        let priors: Vec<_> = [1.0, 0.5, 0.3].iter().map(|&s| PriorSpec::isotropic_gaussian(1, 0.0, s)).collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let mut r = pool.install(|| ctx.sweep(&priors, &SensitivityPolicy::default()).unwrap());
            r.entries.iter_mut().for_each(|e| e.elapsed_seconds = 0.0);
            serde_json::to_string(&r).unwrap()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rows_include_percent_error() {
        let cs = gaussian_posterior(0.4, 2, 300, 7);
        let prior0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let lik = ToyLikelihood::gaussian(1, 0.45).unwrap();
        let t0 = fitted(&cs);
        let ctx = SensitivityContext::new(&cs, &prior0, &lik, &t0).unwrap();
        let report = ctx.sweep(&[PriorSpec::isotropic_gaussian(1, 0.0, 1.0)], &SensitivityPolicy::default()).unwrap();
        let rows = report.rows(Some(&[-1.0]));
        let lz = rows[0].log_z.unwrap();
        assert!((rows[0].percent_error.unwrap() - 100.0 * (lz + 1.0)).abs() < 1e-12);
        assert_eq!(rows[0].action, "reuse-target");
        assert_eq!(percent_error(-9.0, -10.0), 10.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        write_rows_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("index,prior,ess,ess_fraction,pareto_k,action"));
    }
}
