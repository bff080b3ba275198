//! Importance-weight diagnostics and the reuse / retrain / refit decision rule.

mod pareto;

pub use pareto::{gpd_fit, pareto_k, tail_size, ParetoK, MIN_DRAWS, MIN_TAIL};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::log_sum_exp;
use crate::model::DensityModel;
use crate::samples::ChainSet;
use crate::scalar::Scalar;

/// Default log-weight range below which weights count as all equal.
pub const DEFAULT_DEGENERATE_TOL: f64 = 1e-6;

/// Unnormalised log importance weights with derived self-normalised weights,
/// effective sample size and Pareto-k̂.
#[derive(Debug, Clone)]
pub struct ImportanceWeights<F> {
    log_w: Vec<F>,
    normalized: Vec<F>,
    ess: F,
    pareto_k: ParetoK<F>,
}

impl<F: Scalar> ImportanceWeights<F> {
    /// Derives all diagnostics from raw log-weights (`-inf` = zero weight).
    pub fn from_log_weights(log_w: Vec<F>, degenerate_tol: F) -> Result<Self> {
        if log_w.is_empty() {
            return Err(Error::input("no importance weights"));
        }
        if log_w.iter().any(|v| v.is_nan() || *v == F::infinity()) {
            return Err(Error::Data("importance log-weights contain NaN or +inf".into()));
        }
        let total = log_sum_exp(&log_w);
        if total == F::neg_infinity() {
            return Err(Error::DisjointSupport);
        }
        let normalized = log_w.iter().map(|&v| (v - total).exp()).collect();
        let ess = ess(&log_w)?;
        let pareto_k = pareto_k(&log_w, degenerate_tol);
        Ok(ImportanceWeights {
            log_w,
            normalized,
            ess,
            pareto_k,
        })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn log_weights(&self) -> &[F] {
        &self.log_w
    }

    /// Self-normalised weights, summing to one.
    pub fn normalized(&self) -> &[F] {
        &self.normalized
    }

    pub fn ess(&self) -> F {
        self.ess
    }

    pub fn ess_fraction(&self) -> F {
        self.ess / F::lit(self.len() as f64)
    }

    pub fn pareto_k(&self) -> ParetoK<F> {
        self.pareto_k
    }

    pub fn summary(&self) -> WeightSummary {
        WeightSummary {
            n: self.len(),
            n_zero: self.log_w.iter().filter(|v| **v == F::neg_infinity()).count(),
            ess: self.ess.as_f64(),
            ess_fraction: self.ess_fraction().as_f64(),
            pareto_k: self.pareto_k.to_f64(),
        }
    }
}

/// Serialisable snapshot of an [`ImportanceWeights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub n_zero: usize,
    pub ess: f64,
    pub ess_fraction: f64,
    pub pareto_k: ParetoK<f64>,
}

/// `(sum w)^2 / sum w^2`, computed from log-weights.
pub fn ess<F: Scalar>(log_w: &[F]) -> Result<F> {
    let max = log_w.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return Err(Error::DisjointSupport);
    }
    let mut s1 = F::zero();
    let mut s2 = F::zero();
    for &v in log_w {
        let w = (v - max).exp();
        s1 += w;
        s2 += w * w;
    }
    Ok(s1 * s1 / s2)
}

fn log_densities<F: Scalar>(samples: &ChainSet<F>, model: &dyn DensityModel<F>) -> Result<Vec<F>> {
    check_dim(model.dimension(), samples.dimension())?;
    let per_chain: Vec<Vec<F>> = (0..samples.n_chains())
        .into_par_iter()
        .map(|c| {
            samples
                .chain_draws(c)
                .map(|d| model.log_density_unchecked(d))
                .collect()
        })
        .collect();
    Ok(per_chain.into_iter().flatten().collect())
}

/// Log prior ratios `log p1 - log p0` at every pooled draw, without diagnostics.
pub fn prior_ratio_values<F: Scalar>(
    samples: &ChainSet<F>,
    prior0: &dyn DensityModel<F>,
    prior1: &dyn DensityModel<F>,
) -> Result<Vec<F>> {
    let lp0 = log_densities(samples, prior0)?;
    let lp1 = log_densities(samples, prior1)?;
    if let Some(i) = lp0.iter().position(|v| *v == F::neg_infinity()) {
        return Err(Error::Data(format!(
            "draw {i} lies outside the support of the original prior"
        )));
    }
    Ok(lp0.iter().zip(&lp1).map(|(&a, &b)| b - a).collect())
}

/// Importance weights for a prior change with a shared likelihood.
pub fn prior_ratio_log_weights<F: Scalar>(
    samples: &ChainSet<F>,
    prior0: &dyn DensityModel<F>,
    prior1: &dyn DensityModel<F>,
    degenerate_tol: F,
) -> Result<ImportanceWeights<F>> {
    let log_w = prior_ratio_values(samples, prior0, prior1)?;
    ImportanceWeights::from_log_weights(log_w, degenerate_tol)
}

/// Importance weights between two full models (prior and likelihood both may change).
pub fn general_log_weights<F: Scalar>(
    samples: &ChainSet<F>,
    prior0: &dyn DensityModel<F>,
    like0: &dyn DensityModel<F>,
    prior1: &dyn DensityModel<F>,
    like1: &dyn DensityModel<F>,
    degenerate_tol: F,
) -> Result<ImportanceWeights<F>> {
    let lp0 = log_densities(samples, prior0)?;
    let ll0 = log_densities(samples, like0)?;
    let lp1 = log_densities(samples, prior1)?;
    let ll1 = log_densities(samples, like1)?;
    let ninf = F::neg_infinity();
    let mut log_w = Vec::with_capacity(lp0.len());
    for i in 0..lp0.len() {
        let old = lp0[i] + ll0[i];
        if old == ninf || lp0[i] == ninf || ll0[i] == ninf {
            return Err(Error::Data(format!(
                "draw {i} has zero density under the original model"
            )));
        }
        let new = if lp1[i] == ninf || ll1[i] == ninf {
            ninf
        } else {
            lp1[i] + ll1[i]
        };
        log_w.push(new - old);
    }
    ImportanceWeights::from_log_weights(log_w, degenerate_tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    RefitRequired,
    RetrainTarget,
    ReuseTarget,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::RefitRequired => "refit-required",
            Action::RetrainTarget => "retrain-target",
            Action::ReuseTarget => "reuse-target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub k_max: f64,
    pub ess_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            k_max: 0.7,
            ess_min: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub thresholds: Thresholds,
    pub pareto_k: ParetoK<f64>,
    pub ess_fraction: f64,
}

/// Two-stage gate: `k >= k_max` (or no estimate) requires a refit; otherwise
/// `ess_fraction <= ess_min` requires retraining the target; otherwise reuse.
pub fn decide<F: Scalar>(pareto_k: ParetoK<F>, ess_fraction: F, thresholds: Thresholds) -> Decision {
    let ess_fraction = ess_fraction.as_f64();
    let k = pareto_k.to_f64();
    let action = match k {
        ParetoK::NotEstimable => Action::RefitRequired,
        ParetoK::Estimated(v) if v >= thresholds.k_max => Action::RefitRequired,
        _ if ess_fraction <= thresholds.ess_min => Action::RetrainTarget,
        _ => Action::ReuseTarget,
    };
    Decision {
        action,
        thresholds,
        pareto_k: k,
        ess_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;
    use crate::model::{Coordinate, Prior, PriorSpec, ToyLikelihood};
    use proptest::prelude::*;
    use rand::Rng;

    const TOL: f64 = DEFAULT_DEGENERATE_TOL;

    fn logs(w: &[f64]) -> Vec<f64> {
        w.iter().map(|v| v.ln()).collect()
    }

    #[test]
    fn ess_hand_values() {
        assert!((ess(&vec![0.0f64; 100]).unwrap() - 100.0).abs() < 1e-12);
        let mut single = vec![f64::NEG_INFINITY; 50];
        single[17] = 3.0;
        assert_eq!(ess(&single).unwrap(), 1.0);
        assert!((ess(&logs(&[1.0, 1.0, 2.0])).unwrap() - 16.0 / 6.0).abs() < 1e-12);
        assert!(matches!(ess(&[f64::NEG_INFINITY; 3]), Err(Error::DisjointSupport)));
    }

    #[test]
    fn degenerate_weights_give_negative_infinity() {
        let k = pareto_k(&vec![0.25f64; 1000], TOL);
        assert_eq!(k, ParetoK::Degenerate);
        assert_eq!(k.value(), f64::NEG_INFINITY);
        // zero weights do not break degeneracy detection
        let mut lw = vec![2f64.ln(); 500];
        lw.extend(vec![f64::NEG_INFINITY; 500]);
        assert_eq!(pareto_k(&lw, TOL), ParetoK::Degenerate);
    }

    #[test]
    fn too_few_weights_not_estimable() {
        let lw: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        assert_eq!(pareto_k(&lw, TOL), ParetoK::NotEstimable);
    }

    #[test]
    fn normalised_weights_sum_to_one() {
        let lw = vec![-1.0, 0.0, 2.0, f64::NEG_INFINITY, 1e3];
        let w = ImportanceWeights::from_log_weights(lw, TOL).unwrap();
        let s: f64 = w.normalized().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(w.normalized().iter().all(|&v| v >= 0.0));
        assert!(w.ess() >= 1.0 && w.ess() <= 5.0);
        assert!(matches!(
            ImportanceWeights::from_log_weights(vec![f64::NEG_INFINITY; 4], TOL),
            Err(Error::DisjointSupport)
        ));
    }

    fn draws_1d(values: &[f64]) -> ChainSet<f64> {
        ChainSet::new(1, vec![values.to_vec()]).unwrap()
    }

    #[test]
    fn identical_priors() {
        let p = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let cs = draws_1d(&(0..100).map(|i| i as f64 / 50.0 - 1.0).collect::<Vec<_>>());
        let w = prior_ratio_log_weights(&cs, &p, &p, TOL).unwrap();
        assert!(w.log_weights().iter().all(|&v| v == 0.0));
        assert_eq!(w.ess_fraction(), 1.0);
        assert_eq!(w.pareto_k(), ParetoK::Degenerate);
    }

    #[test]
    fn log_uniform_boundary_change() {
        let p0 = Prior::new(PriorSpec::log_uniform(vec![1e-10], vec![1.0], Coordinate::Log10)).unwrap();
        let p1 = Prior::new(PriorSpec::log_uniform(vec![1e-5], vec![1.0], Coordinate::Log10)).unwrap();
        let values: Vec<f64> = (0..200).map(|i| -10.0 + 10.0 * (i as f64 + 0.5) / 200.0).collect();
        let cs = draws_1d(&values);
        let w = prior_ratio_log_weights(&cs, &p0, &p1, TOL).unwrap();
        for (&v, &lw) in values.iter().zip(w.log_weights()) {
            if v < -5.0 {
                assert_eq!(lw, f64::NEG_INFINITY);
            } else {
                assert!((lw - 2f64.ln()).abs() < 1e-12);
            }
        }
        assert!((w.ess_fraction() - 0.5).abs() < 1e-12);
        assert_eq!(w.pareto_k(), ParetoK::Degenerate);
    }

    #[test]
    fn narrower_gaussian_ratio() {
        let p0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let p1 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 0.5)).unwrap();
        let values: Vec<f64> = (0..50).map(|i| i as f64 / 10.0 - 2.5).collect();
        let cs = draws_1d(&values);
        let w = prior_ratio_log_weights(&cs, &p0, &p1, TOL).unwrap();
        // log(1/0.5) - t^2/(2 * 0.25) + t^2/2
        for (&t, &lw) in values.iter().zip(w.log_weights()) {
            assert!((lw - (2f64.ln() - 1.5 * t * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn original_prior_must_cover_draws() {
        let p0 = Prior::new(PriorSpec::uniform(vec![0.0], vec![1.0])).unwrap();
        let p1 = Prior::new(PriorSpec::uniform(vec![0.0], vec![2.0])).unwrap();
        let cs = draws_1d(&[0.5, 1.5]);
        assert!(matches!(prior_ratio_log_weights(&cs, &p0, &p1, TOL), Err(Error::Data(_))));
        let far = Prior::new(PriorSpec::uniform(vec![5.0], vec![6.0])).unwrap();
        let cs = draws_1d(&[0.5, 0.25]);
        assert!(matches!(prior_ratio_log_weights(&cs, &p0, &far, TOL), Err(Error::DisjointSupport)));
    }

    #[test]
    fn general_weights_cancel_and_shift() {
        let p0 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 1.0)).unwrap();
        let p1 = Prior::new(PriorSpec::isotropic_gaussian(1, 0.2, 0.7)).unwrap();
        let l = ToyLikelihood::gaussian(1, 0.5).unwrap();
        let mut rng = rng_from_seed(1);
        let values: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let cs = draws_1d(&values);
        let a = general_log_weights(&cs, &p0, &l, &p1, &l, TOL).unwrap();
        let b = prior_ratio_log_weights(&cs, &p0, &p1, TOL).unwrap();
        for (x, y) in a.log_weights().iter().zip(b.log_weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        // like1 = like0 / 4 on the draws: two box densities of different width
        let wide = Prior::new(PriorSpec::uniform(vec![-1.0], vec![1.0])).unwrap();
        let wider = Prior::new(PriorSpec::uniform(vec![-4.0], vec![4.0])).unwrap();
        let d = general_log_weights(&cs, &p0, &wide, &p1, &wider, TOL).unwrap();
        let shift = (0.25f64).ln();
        let e = general_log_weights(&cs, &p0, &wide, &p1, &wide, TOL).unwrap();
        for (x, y) in d.log_weights().iter().zip(e.log_weights()) {
            assert!((x - y - shift).abs() < 1e-12);
        }
        assert!((d.ess() - e.ess()).abs() < 1e-9);
        assert!((d.pareto_k().value() - e.pareto_k().value()).abs() < 1e-10);
    }

    #[test]
    fn shifted_gaussian_likelihood_by_hand() {
        #[derive(Debug)]
        struct Shifted(f64);
        impl DensityModel<f64> for Shifted {
            fn dimension(&self) -> usize {
                1
            }
            fn kind(&self) -> crate::model::DensityKind {
                crate::model::DensityKind::Likelihood
            }
            fn log_density_unchecked(&self, t: &[f64]) -> f64 {
                -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (t[0] - self.0).powi(2)
            }
        }
        let p = Prior::new(PriorSpec::isotropic_gaussian(1, 0.0, 3.0)).unwrap();
        let values: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.2).collect();
        let cs = draws_1d(&values);
        let w = general_log_weights(&cs, &p, &Shifted(0.0), &p, &Shifted(0.8), TOL).unwrap();
        for (&t, &lw) in values.iter().zip(w.log_weights()) {
            let hand = 0.8 * t - 0.32;
            assert!((lw - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn decision_truth_table() {
        let th = Thresholds::default();
        let cases = [
            (ParetoK::Estimated(0.3), 0.99, Action::ReuseTarget),
            (ParetoK::Estimated(0.3), 0.95, Action::RetrainTarget),
            (ParetoK::Estimated(0.3), 0.41, Action::RetrainTarget),
            (ParetoK::Estimated(0.7), 0.99, Action::RefitRequired),
            (ParetoK::Estimated(0.7), 0.95, Action::RefitRequired),
            (ParetoK::Estimated(0.9), 0.20, Action::RefitRequired),
            (ParetoK::Degenerate, 1.0, Action::ReuseTarget),
            (ParetoK::Estimated(0.1), 0.41, Action::RetrainTarget),
            (ParetoK::Estimated(0.9), 0.99, Action::RefitRequired),
            (ParetoK::NotEstimable, 1.0, Action::RefitRequired),
        ];
        for (k, e, want) in cases {
            assert_eq!(decide(k, e, th).action, want, "k={k:?} ess={e}");
        }
    }

    #[test]
    fn pareto_k_json_encoding() {
        assert_eq!(serde_json::to_string(&ParetoK::<f64>::Degenerate).unwrap(), "\"-inf\"");
        assert_eq!(serde_json::to_string(&ParetoK::Estimated(0.5f64)).unwrap(), "0.5");
        let back: ParetoK<f64> = serde_json::from_str("\"-inf\"").unwrap();
        assert_eq!(back, ParetoK::Degenerate);
    }

    fn gpd_draws(k: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if k == 0.0 {
                    -(1.0 - u).ln()
                } else {
                    ((1.0 - u).powf(-k) - 1.0) / k
                }
            })
            .collect()
    }

    #[test]
    fn gpd_oracle_k_half_and_heavy() {
        // a single 10^4-draw fit has sd ~0.09, so average over seeds
        let k = (0..20)
            .map(|s| pareto_k(&logs(&gpd_draws(0.5, 10_000, 42 + s)), TOL).value())
            .sum::<f64>()
            / 20.0;
        assert!((k - 0.5).abs() < 0.1, "k = {k}");
        let lw = logs(&gpd_draws(1.2, 10_000, 43));
        let k = pareto_k(&lw, TOL).value();
        assert!(k > 0.7, "k = {k}");
    }

    #[test]
    fn works_in_single_precision() {
        let lw: Vec<f32> = gpd_draws(0.5, 10_000, 5).iter().map(|v| v.ln() as f32).collect();
        let k = pareto_k(&lw, 1e-6).value();
        assert!((k - 0.5).abs() < 0.15, "k = {k}");
        assert!((ess(&[0.0f32, 0.0, 2f32.ln()]).unwrap() - 16.0 / 6.0).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn ess_and_k_scale_invariant(seed in 0u64..1000, log_c in -50.0f64..50.0) {
            let lw = logs(&gpd_draws(0.4, 400, seed));
            let shifted: Vec<f64> = lw.iter().map(|v| v + log_c).collect();
            let (a, b) = (ess(&lw).unwrap(), ess(&shifted).unwrap());
            prop_assert!((a - b).abs() <= 1e-10 * a);
            let (ka, kb) = (pareto_k(&lw, TOL).value(), pareto_k(&shifted, TOL).value());
            prop_assert!((ka - kb).abs() < 1e-10, "{} vs {}", ka, kb);
        }

        #[test]
        fn ess_within_bounds(lw in prop::collection::vec(-30.0f64..30.0, 1..200)) {
            let e = ess(&lw).unwrap();
            prop_assert!(e >= 1.0 - 1e-12 && e <= lw.len() as f64 + 1e-9);
        }

        #[test]
        fn decide_is_monotone(k in -1.0f64..1.5, dk in 0.0f64..1.0, e in 0.0f64..1.0, de in 0.0f64..1.0) {
            let th = Thresholds::default();
            let a = decide(ParetoK::Estimated(k), e, th).action;
            if a == Action::RefitRequired {
                prop_assert_eq!(decide(ParetoK::Estimated(k + dk), e, th).action, Action::RefitRequired);
            }
            if a == Action::RetrainTarget {
                prop_assert_eq!(decide(ParetoK::Estimated(k), (e - de).max(0.0), th).action, Action::RetrainTarget);
            }
        }

        #[test]
        fn ess_fraction_one_iff_equal(n in 2usize..100, spread in prop_oneof![Just(0.0f64), 0.01f64..2.0]) {
            let lw: Vec<f64> = (0..n).map(|i| spread * i as f64 / n as f64).collect();
            let w = ImportanceWeights::from_log_weights(lw, TOL).unwrap();
            if spread == 0.0 {
                prop_assert!((1.0 - w.ess_fraction()).abs() < 1e-12);
                prop_assert_eq!(w.pareto_k(), ParetoK::Degenerate);
            } else {
                prop_assert!(w.ess_fraction() < 1.0 - 1e-6);
            }
        }
    }
}
