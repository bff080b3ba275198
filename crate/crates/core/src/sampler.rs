//! Adaptive random-walk Metropolis for generating posterior draws.
//!
//! The isotropic Gaussian proposal scale is tuned by Robbins–Monro on its
//! logarithm during burn-in only; the kernel is fixed once draws are kept.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{rng_from_seed, sub_seed};
use crate::model::{unnorm_log_posterior, DensityModel, Prior};
use crate::samples::{ChainSet, Provenance, SamplerInfo};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Kept draws per chain.
    pub n_draws: usize,
    /// Discarded iterations per chain; `None` means half of `n_draws`.
    pub n_burnin: Option<usize>,
    /// Keep every `thin`-th iteration after burn-in.
    pub thin: usize,
    pub initial_scale: f64,
    /// Burn-in iterations during which the scale adapts; `None` means all of burn-in.
    pub adapt_window: Option<usize>,
    pub target_accept: f64,
    pub seed: u64,
    pub max_init_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_draws: 1000,
            n_burnin: None,
            thin: 1,
            initial_scale: 1.0,
            adapt_window: None,
            target_accept: 0.234,
            seed: 0,
            max_init_attempts: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn burnin(&self) -> usize {
        self.n_burnin.unwrap_or(self.n_draws / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_draws == 0 {
            return Err(Error::input("sampler needs at least one chain and one draw"));
        }
        if self.thin == 0 {
            return Err(Error::input("thinning interval must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::input("target acceptance must lie in (0, 1)"));
        }
        if !(self.initial_scale > 0.0) || !self.initial_scale.is_finite() {
            return Err(Error::input("initial proposal scale must be positive"));
        }
        if self.max_init_attempts == 0 {
            return Err(Error::input("max_init_attempts must be at least 1"));
        }
        Ok(())
    }
}

/// Metropolis acceptance probability `min(1, exp(proposed - current))`.
pub fn acceptance_probability<F: Scalar>(current: F, proposed: F) -> F {
    if proposed == F::neg_infinity() {
        return F::zero();
    }
    let r = proposed - current;
    if r >= F::zero() {
        F::one()
    } else {
        r.exp()
    }
}

#[derive(Debug, Clone)]
struct ChainOutput<F> {
    draws: Vec<F>,
    acceptance: f64,
    scale: f64,
}

fn run_chain<F: Scalar>(
    prior: &Prior<F>,
    likelihood: &dyn DensityModel<F>,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput<F>> {
    let d = prior.dimension();
    let mut rng = rng_from_seed(sub_seed(cfg.seed, "chain", chain as u64));

    let mut start = None;
    for _ in 0..cfg.max_init_attempts {
        let x = prior.sample(&mut rng);
        let lp = unnorm_log_posterior(prior, likelihood, &x)?;
        if lp.is_finite() {
            start = Some((x, lp));
            break;
        }
    }
    let (mut x, mut lp) = start.ok_or_else(|| {
        Error::Initialisation(format!(
            "chain {chain}: no prior draw with finite posterior density in {} attempts",
            cfg.max_init_attempts
        ))
    })?;

    let burnin = cfg.burnin();
    let window = cfg.adapt_window.unwrap_or(burnin).min(burnin);
    let target = cfg.target_accept;
    let mut log_scale = cfg.initial_scale.ln();
    let mut proposal = vec![F::zero(); d];
    let mut draws = Vec::with_capacity(cfg.n_draws * d);
    let mut accepted = 0usize;

    let mut kept_iterations = 0usize;
    for t in 0..burnin + cfg.n_draws * cfg.thin {
        let scale = F::lit(log_scale.exp());
        for (p, &xi) in proposal.iter_mut().zip(&x) {
            *p = xi + scale * F::lit(rng.sample::<f64, _>(StandardNormal));
        }
        let lp_new = unnorm_log_posterior(prior, likelihood, &proposal)?;
        let alpha = acceptance_probability(lp, lp_new);
        let u: f64 = rng.random();
        let accept = u < alpha.as_f64();
        if accept {
            x.copy_from_slice(&proposal);
            lp = lp_new;
        }
        if t < window {
            let gain = (1.0 + t as f64 / 50.0).powf(-0.5);
            log_scale += gain * (alpha.as_f64() - target);
        }
        if t >= burnin {
            kept_iterations += 1;
            if accept {
                accepted += 1;
            }
            if (t - burnin + 1) % cfg.thin == 0 {
                draws.extend_from_slice(&x);
            }
        }
    }
    Ok(ChainOutput {
        draws,
        acceptance: accepted as f64 / kept_iterations as f64,
        scale: log_scale.exp(),
    })
}

/// Runs `cfg.n_chains` independent chains targeting `likelihood x prior`.
///
/// Each chain derives its own seed from `cfg.seed`, so the output does not
/// depend on how chains are scheduled across threads.
pub fn run_metropolis<F: Scalar>(
    prior: &Prior<F>,
    likelihood: &dyn DensityModel<F>,
    cfg: &SamplerConfig,
) -> Result<ChainSet<F>> {
    cfg.validate()?;
    check_dim(prior.dimension(), likelihood.dimension())?;
    let outputs: Vec<ChainOutput<F>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(prior, likelihood, cfg, c))
        .collect::<Result<_>>()?;
    let info = SamplerInfo {
        name: "adaptive-random-walk-metropolis".into(),
        n_burnin: Some(cfg.burnin()),
        thin: Some(cfg.thin),
        acceptance_rates: outputs.iter().map(|o| o.acceptance).collect(),
        proposal_scales: outputs.iter().map(|o| o.scale).collect(),
    };
    let coordinate = prior.spec().coordinate();
    let cs = ChainSet::new(prior.dimension(), outputs.into_iter().map(|o| o.draws).collect())?;
    Ok(cs.with_provenance(Provenance {
        seed: Some(cfg.seed),
        sampler: Some(info),
        coordinates: Some(vec![coordinate; prior.dimension()]),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, sample_std};
    use crate::model::{PriorSpec, ToyLikelihood};

    fn std_normal_problem() -> (Prior<f64>, ToyLikelihood<f64>) {
        // flat box prior wide enough to be irrelevant; N(0,1) likelihood
        let p = Prior::new(PriorSpec::uniform(vec![-50.0], vec![50.0])).unwrap();
        let l = ToyLikelihood::gaussian(1, 1.0).unwrap();
        (p, l)
    }

    #[test]
    fn standard_normal_moments() {
        let (p, l) = std_normal_problem();
        let cfg = SamplerConfig {
            n_chains: 4,
            n_draws: 5000,
            seed: 17,
            ..Default::default()
        };
        let cs = run_metropolis(&p, &l, &cfg).unwrap();
        assert_eq!(cs.n_draws(), 20_000);
        let v: Vec<f64> = cs.iter().map(|d| d[0]).collect();
        let m = mean(&v);
        let var = sample_std(&v).powi(2);
        // chains are autocorrelated; RWM on N(0,1) at ~0.4 acceptance has tau ~ 6
        let se = (6.0 / v.len() as f64).sqrt();
        assert!(m.abs() < 4.0 * se, "mean {m}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn adaptation_reaches_target_acceptance() {
        let (p, l) = std_normal_problem();
        let cfg = SamplerConfig {
            n_chains: 4,
            n_draws: 4000,
            n_burnin: Some(4000),
            initial_scale: 20.0,
            seed: 3,
            ..Default::default()
        };
        let cs = run_metropolis(&p, &l, &cfg).unwrap();
        for &a in &cs.provenance().sampler.as_ref().unwrap().acceptance_rates {
            assert!((a - 0.234).abs() < 0.1, "acceptance {a}");
        }
    }

    #[test]
    fn gaussian_toy_posterior_width() {
        let sigma_l: f64 = 2e-4;
        let p = Prior::new(PriorSpec::isotropic_gaussian(10, 0.0, 1.0)).unwrap();
        let l = ToyLikelihood::gaussian(10, sigma_l).unwrap();
        let cfg = SamplerConfig {
            n_chains: 16,
            n_draws: 1000,
            // chains start ~1e4 posterior widths away from the mode
            n_burnin: Some(2000),
            seed: 1,
            ..Default::default()
        };
        let cs = run_metropolis(&p, &l, &cfg).unwrap();
        let sigma_post = (1.0 / (sigma_l * sigma_l) + 1.0).powf(-0.5);
        for j in 0..10 {
            let v: Vec<f64> = cs.iter().map(|d| d[j]).collect();
            let s = sample_std(&v);
            assert!((s / sigma_post - 1.0).abs() < 0.1, "coord {j}: std {s} vs {sigma_post}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (p, l) = std_normal_problem();
        let cfg = SamplerConfig {
            n_chains: 3,
            n_draws: 200,
            seed: 5,
            ..Default::default()
        };
        let a = run_metropolis(&p, &l, &cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_metropolis(&p, &l, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs() {
        let (p, l) = std_normal_problem();
        for cfg in [
            SamplerConfig {
                n_draws: 0,
                ..Default::default()
            },
            SamplerConfig {
                n_chains: 0,
                ..Default::default()
            },
            SamplerConfig {
                target_accept: 1.0,
                ..Default::default()
            },
            SamplerConfig {
                thin: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(run_metropolis(&p, &l, &cfg), Err(Error::Input(_))));
        }
    }

    #[test]
    fn thinning_keeps_the_requested_draws_and_decorrelates() {
        let (p, l) = std_normal_problem();
        let lag1 = |thin: usize| {
            let cfg = SamplerConfig {
                n_chains: 2,
                n_draws: 3000,
                thin,
                seed: 4,
                ..Default::default()
            };
            let cs = run_metropolis(&p, &l, &cfg).unwrap();
            assert_eq!(cs.chain_len(0), 3000);
            assert_eq!(cs.provenance().sampler.as_ref().unwrap().thin, Some(thin));
            let x = cs.chain_data(0);
            let m = mean(x);
            let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
            let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
            num / den
        };
        assert!(lag1(10) < lag1(1));
    }

    #[test]
    fn initialisation_failure() {
        #[derive(Debug)]
        struct Nowhere;
        impl DensityModel<f64> for Nowhere {
            fn dimension(&self) -> usize {
                1
            }
            fn kind(&self) -> crate::model::DensityKind {
                crate::model::DensityKind::Likelihood
            }
            fn log_density_unchecked(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
        }
        let p = Prior::new(PriorSpec::uniform(vec![0.0], vec![1.0])).unwrap();
        let cfg = SamplerConfig {
            max_init_attempts: 10,
            ..Default::default()
        };
        assert!(matches!(run_metropolis(&p, &Nowhere, &cfg), Err(Error::Initialisation(_))));
    }

    /// Builds the Metropolis transition matrix on three states with a uniform
    /// symmetric proposal over the other two and checks its stationary law.
    #[test]
    fn three_state_detailed_balance() {
        let target = [0.2f64, 0.5, 0.3];
        let logp: Vec<f64> = target.iter().map(|p| p.ln()).collect();
        let mut k = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    k[i][j] = 0.5 * acceptance_probability(logp[i], logp[j]);
                }
            }
            k[i][i] = 1.0 - k[i].iter().sum::<f64>();
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((target[i] * k[i][j] - target[j] * k[j][i]).abs() < 1e-15);
            }
        }
        let mut pi = [1.0 / 3.0; 3];
        for _ in 0..500 {
            let mut next = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    next[j] += pi[i] * k[i][j];
                }
            }
            pi = next;
        }
        for (a, b) in pi.iter().zip(&target) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_precision_chain() {
        let p = Prior::new(PriorSpec::<f32>::uniform(vec![-20.0], vec![20.0])).unwrap();
        let l = ToyLikelihood::<f32>::gaussian(1, 1.0).unwrap();
        let cfg = SamplerConfig {
            n_chains: 2,
            n_draws: 4000,
            seed: 8,
            ..Default::default()
        };
        let cs = run_metropolis(&p, &l, &cfg).unwrap();
        let v: Vec<f32> = cs.iter().map(|d| d[0]).collect();
        assert!(mean(&v).abs() < 0.15);
    }
}
