//! The learned harmonic mean estimator of the reciprocal evidence, computed in
//! log space, with per-chain and bootstrap-over-chains uncertainty.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{log_sum_exp, log_sum_exp_sorted, rng_from_seed, sample_std};
use crate::model::DensityModel;
use crate::samples::ChainSet;
use crate::scalar::Scalar;
use crate::target::TargetDensity;

/// Replicate count below which bootstrap results are flagged.
pub const MIN_BOOTSTRAP_REPLICATES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum UncertaintyMethod {
    /// Standard error of the per-chain estimates.
    PerChain,
    /// Single chain: i.i.d. standard error of the per-draw ratios.
    WithinChain,
    Bootstrap { replicates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceProvenance {
    Direct,
    Resampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate<F> {
    pub log_rho_hat: F,
    /// Always `-log_rho_hat`.
    pub log_z: F,
    pub sigma_log_z: F,
    pub uncertainty: UncertaintyMethod,
    pub n_draws: usize,
    pub n_chains: usize,
    pub provenance: EvidenceProvenance,
    pub per_chain_log_rho: Vec<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_file: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Outcome of a bootstrap over chains.
#[derive(Debug, Clone, PartialEq)]
pub struct Bootstrap<F> {
    pub sigma: F,
    pub replicate_log_z: Vec<F>,
    pub warnings: Vec<String>,
}

impl<F: Scalar> EvidenceEstimate<F> {
    /// Replaces the uncertainty with a bootstrap result.
    pub fn with_bootstrap(mut self, b: Bootstrap<F>) -> Self {
        self.sigma_log_z = b.sigma;
        self.uncertainty = UncertaintyMethod::Bootstrap {
            replicates: b.replicate_log_z.len(),
        };
        self.warnings.extend(b.warnings);
        self
    }
}

/// Log-likelihood of every draw in pooled order, evaluated once per draw.
pub fn log_likelihoods<F: Scalar>(samples: &ChainSet<F>, likelihood: &dyn DensityModel<F>) -> Result<Vec<F>> {
    check_dim(likelihood.dimension(), samples.dimension())?;
    let per_chain: Vec<Vec<F>> = (0..samples.n_chains())
        .into_par_iter()
        .map(|c| {
            samples
                .chain_draws(c)
                .map(|d| likelihood.log_density_unchecked(d))
                .collect()
        })
        .collect();
    let out: Vec<F> = per_chain.into_iter().flatten().collect();
    if let Some(i) = out.iter().position(|v| v.is_nan() || *v == F::infinity()) {
        return Err(Error::Data(format!("log-likelihood of draw {i} is {}", out[i])));
    }
    Ok(out)
}

/// Per-draw `log phi - log L - log p`, with the log-likelihoods supplied.
pub fn log_ratios<F: Scalar>(
    samples: &ChainSet<F>,
    prior: &dyn DensityModel<F>,
    log_lik: &[F],
    target: &dyn TargetDensity<F>,
) -> Result<Vec<F>> {
    check_dim(prior.dimension(), samples.dimension())?;
    check_dim(target.dimension(), samples.dimension())?;
    if log_lik.len() != samples.n_draws() {
        return Err(Error::input(format!(
            "{} cached log-likelihoods for {} draws",
            log_lik.len(),
            samples.n_draws()
        )));
    }
    let per_chain: Vec<Vec<F>> = (0..samples.n_chains())
        .into_par_iter()
        .map(|c| {
            let offset = samples.offsets()[c];
            samples
                .chain_draws(c)
                .enumerate()
                .map(|(i, d)| {
                    let ll = log_lik[offset + i];
                    let lp = prior.log_density_unchecked(d);
                    let post = ll + lp;
                    if !post.is_finite() {
                        return Err(Error::Data(format!(
                            "draw {} of chain {c} has log posterior density {post}; \
                             the draws do not match this prior and likelihood",
                            i
                        )));
                    }
                    let r = target.log_phi_unchecked(d) - post;
                    if r.is_nan() {
                        return Err(Error::Data(format!("target density is NaN at draw {i} of chain {c}")));
                    }
                    Ok(r)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_chain.into_iter().flatten().collect())
}

/// Log-sum-exp of a chain's ratios in ascending order, so the result does
/// not depend on draw order.
fn chain_lse<F: Scalar>(values: &[F]) -> F {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("ratios are not NaN"));
    log_sum_exp_sorted(&v)
}

fn chain_sums<F: Scalar>(log_ratios: &[F], chain_sizes: &[usize]) -> Result<Vec<F>> {
    let total: usize = chain_sizes.iter().sum();
    if total != log_ratios.len() || chain_sizes.iter().any(|&s| s == 0) {
        return Err(Error::input(format!(
            "chain sizes {chain_sizes:?} do not partition {} ratios",
            log_ratios.len()
        )));
    }
    let mut starts = Vec::with_capacity(chain_sizes.len());
    let mut cursor = 0;
    for &s in chain_sizes {
        starts.push(cursor);
        cursor += s;
    }
    Ok(starts
        .par_iter()
        .zip(chain_sizes)
        .map(|(&a, &s)| chain_lse(&log_ratios[a..a + s]))
        .collect())
}

fn ln_count<F: Scalar>(n: usize) -> F {
    F::lit((n as f64).ln())
}

/// Pools per-draw log ratios into an estimate, with per-chain uncertainty
/// (or within-chain scatter for a single chain).
pub fn estimate_from_log_ratios<F: Scalar>(
    log_ratios: &[F],
    chain_sizes: &[usize],
    provenance: EvidenceProvenance,
) -> Result<EvidenceEstimate<F>> {
    let sums = chain_sums(log_ratios, chain_sizes)?;
    let n: usize = chain_sizes.iter().sum();
    let log_rho_hat = log_sum_exp(&sums) - ln_count::<F>(n);
    let per_chain_log_rho: Vec<F> = sums
        .iter()
        .zip(chain_sizes)
        .map(|(&s, &k)| s - ln_count::<F>(k))
        .collect();
    let mut warnings = Vec::new();
    let c = chain_sizes.len();
    let (sigma, method) = if c >= 2 {
        // sigma_rho / rho from the spread of per-chain rho_c / rho
        let nf = n as f64;
        let lr = log_rho_hat.as_f64();
        let var: f64 = per_chain_log_rho
            .iter()
            .zip(chain_sizes)
            .map(|(&v, &k)| k as f64 * ((v.as_f64() - lr).exp() - 1.0).powi(2))
            .sum::<f64>()
            / nf
            * c as f64
            / (c as f64 - 1.0);
        ((var / c as f64).sqrt(), UncertaintyMethod::PerChain)
    } else {
        let msg = "single chain: uncertainty from within-chain scatter ignores autocorrelation and is unreliable";
        warn!("{msg}");
        warnings.push(msg.to_string());
        let lr = log_rho_hat.as_f64();
        let u: Vec<f64> = log_ratios.iter().map(|v| (v.as_f64() - lr).exp()).collect();
        let sd = if u.len() > 1 { sample_std(&u) } else { 0.0 };
        (sd / (n as f64).sqrt(), UncertaintyMethod::WithinChain)
    };
    if !log_rho_hat.is_finite() {
        return Err(Error::Data(format!("log reciprocal evidence is {log_rho_hat}")));
    }
    Ok(EvidenceEstimate {
        log_rho_hat,
        log_z: -log_rho_hat,
        sigma_log_z: F::lit(sigma),
        uncertainty: method,
        n_draws: n,
        n_chains: c,
        provenance,
        per_chain_log_rho,
        target_file: None,
        warnings,
    })
}

pub(crate) fn replicate_warnings(replicates: usize) -> Vec<String> {
    if replicates < MIN_BOOTSTRAP_REPLICATES {
        let msg = format!(
            "{replicates} bootstrap replicates is below the recommended minimum of {MIN_BOOTSTRAP_REPLICATES}"
        );
        warn!("{msg}");
        vec![msg]
    } else {
        Vec::new()
    }
}

pub(crate) fn check_bootstrap(n_chains: usize, replicates: usize) -> Result<()> {
    if n_chains < 2 {
        return Err(Error::input("bootstrap over chains needs at least 2 chains"));
    }
    if replicates < 2 {
        return Err(Error::input("bootstrap needs at least 2 replicates"));
    }
    Ok(())
}

/// Bootstrap over whole chains with a fixed target: each replicate draws
/// `n_chains` chains with replacement and recomputes log Z.
pub fn bootstrap_from_log_ratios<F: Scalar>(
    log_ratios: &[F],
    chain_sizes: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<Bootstrap<F>> {
    check_bootstrap(chain_sizes.len(), replicates)?;
    let warnings = replicate_warnings(replicates);
    let sums = chain_sums(log_ratios, chain_sizes)?;
    let c = sums.len();
    let mut rng = rng_from_seed(seed);
    let mut replicate_log_z = Vec::with_capacity(replicates);
    let mut picked = vec![F::zero(); c];
    for _ in 0..replicates {
        let mut n = 0;
        for slot in picked.iter_mut() {
            let j = rng.random_range(0..c);
            *slot = sums[j];
            n += chain_sizes[j];
        }
        replicate_log_z.push(ln_count::<F>(n) - log_sum_exp(&picked));
    }
    Ok(Bootstrap {
        sigma: sample_std(&replicate_log_z),
        replicate_log_z,
        warnings,
    })
}

/// Direct estimate from posterior draws.
pub fn lhme<F: Scalar>(
    samples: &ChainSet<F>,
    prior: &dyn DensityModel<F>,
    likelihood: &dyn DensityModel<F>,
    target: &dyn TargetDensity<F>,
) -> Result<EvidenceEstimate<F>> {
    let ll = log_likelihoods(samples, likelihood)?;
    let lr = log_ratios(samples, prior, &ll, target)?;
    estimate_from_log_ratios(&lr, &samples.chain_lengths(), EvidenceProvenance::Direct)
}

/// Bootstrap standard deviation of log Z over chains with a fixed target.
pub fn bootstrap_sigma<F: Scalar>(
    samples: &ChainSet<F>,
    prior: &dyn DensityModel<F>,
    likelihood: &dyn DensityModel<F>,
    target: &dyn TargetDensity<F>,
    replicates: usize,
    seed: u64,
) -> Result<Bootstrap<F>> {
    check_bootstrap(samples.n_chains(), replicates)?;
    let ll = log_likelihoods(samples, likelihood)?;
    let lr = log_ratios(samples, prior, &ll, target)?;
    bootstrap_from_log_ratios(&lr, &samples.chain_lengths(), replicates, seed)
}
