//! Reference evidence values: the closed-form Gaussian toy and midpoint-rule
//! grid integration in one or two dimensions.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::log_sum_exp;
use crate::model::DensityModel;

/// log Z of `N(0, sigma_l^2 I)` likelihood under a `N(0, sigma_p^2 I)` prior in
/// `d` dimensions.
pub fn gaussian_log_evidence(d: usize, sigma_l: f64, sigma_p: f64) -> Result<f64> {
    if !(sigma_l > 0.0 && sigma_p > 0.0) || !sigma_l.is_finite() || !sigma_p.is_finite() {
        return Err(Error::input(format!(
            "scales must be positive and finite, got {sigma_l} and {sigma_p}"
        )));
    }
    Ok(-(d as f64) / 2.0 * (2.0 * std::f64::consts::PI * (sigma_l * sigma_l + sigma_p * sigma_p)).ln())
}

/// Axis-aligned grid of `points[i]` cells on `[lower[i], upper[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn square(lower: f64, upper: f64, points: usize, dimension: usize) -> Self {
        GridSpec {
            lower: vec![lower; dimension],
            upper: vec![upper; dimension],
            points: vec![points; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension();
        if d == 0 || self.upper.len() != d || self.points.len() != d {
            return Err(Error::input("grid bounds and point counts must have one entry per axis"));
        }
        for i in 0..d {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::input(format!("grid axis {i} needs finite lower < upper")));
            }
            if self.points[i] < 2 {
                return Err(Error::input(format!("grid axis {i} needs at least 2 points")));
            }
        }
        Ok(())
    }

    fn step(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.points[axis] as f64
    }

    fn midpoint(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + (i as f64 + 0.5) * self.step(axis)
    }

    /// Short resolution tag such as `4000x4000`.
    pub fn resolution(&self) -> String {
        self.points
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvidence {
    pub log_z: f64,
    /// Prior mass captured by the grid.
    pub prior_mass: f64,
    pub resolution: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Midpoint-rule log evidence on a grid (dimension 1 or 2).
pub fn grid_log_evidence(
    prior: &dyn DensityModel<f64>,
    likelihood: &dyn DensityModel<f64>,
    grid: &GridSpec,
) -> Result<GridEvidence> {
    grid.validate()?;
    let d = grid.dimension();
    if d > 2 {
        return Err(Error::Unsupported(format!(
            "grid integration is limited to 2 dimensions, got {d}"
        )));
    }
    check_dim(prior.dimension(), d)?;
    check_dim(likelihood.dimension(), d)?;
    let rows = grid.points[0];
    let cols = if d == 2 { grid.points[1] } else { 1 };
    // per row: (log sum of L p, log sum of p)
    let per_row: Vec<(f64, f64)> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut post = Vec::with_capacity(cols);
            let mut pri = Vec::with_capacity(cols);
            let mut theta = [grid.midpoint(0, i), 0.0];
            for j in 0..cols {
                if d == 2 {
                    theta[1] = grid.midpoint(1, j);
                }
                let lp = prior.log_density_unchecked(&theta[..d]);
                pri.push(lp);
                post.push(if lp == f64::NEG_INFINITY {
                    lp
                } else {
                    lp + likelihood.log_density_unchecked(&theta[..d])
                });
            }
            (log_sum_exp(&post), log_sum_exp(&pri))
        })
        .collect();
    let log_cell: f64 = (0..d).map(|a| grid.step(a).ln()).sum();
    let (post, pri): (Vec<f64>, Vec<f64>) = per_row.into_iter().unzip();
    let log_z = log_sum_exp(&post) + log_cell;
    let prior_mass = (log_sum_exp(&pri) + log_cell).exp();
    if log_z.is_nan() {
        return Err(Error::Data("grid integrand produced NaN".into()));
    }
    let mut warnings = Vec::new();
    if prior_mass < 1.0 - 1e-6 {
        let msg = format!(
            "grid covers only {prior_mass:.6} of the prior mass; the evidence is truncated"
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(GridEvidence {
        log_z,
        prior_mass,
        resolution: grid.resolution(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng_from_seed;
    use crate::model::{DensityKind, Prior, PriorSpec, ToyLikelihood};
    use rand::Rng;

    fn gauss_prior(d: usize, s: f64) -> Prior<f64> {
        Prior::new(PriorSpec::isotropic_gaussian(d, 0.0, s)).unwrap()
    }

    struct Flat(usize);

    impl DensityModel<f64> for Flat {
        fn dimension(&self) -> usize {
            self.0
        }
        fn kind(&self) -> DensityKind {
            DensityKind::Likelihood
        }
        fn log_density_unchecked(&self, _: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn closed_form_values() {
        let s = (1.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!(gaussian_log_evidence(1, s, s).unwrap().abs() < 1e-15);
        assert!((gaussian_log_evidence(10, 2e-4, 1.0).unwrap() + 9.18939).abs() < 1e-5);
        let v = gaussian_log_evidence(2, 1.0, 1.0).unwrap();
        assert!((v + (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!((v + 2.5310).abs() < 1e-4);
        assert!(gaussian_log_evidence(1, 0.0, 1.0).is_err());
        assert!(gaussian_log_evidence(1, 1.0, -1.0).is_err());
    }

    #[test]
    fn ten_dimensional_value_from_one_dimensional_quadrature() {
        let one = grid_log_evidence(
            &gauss_prior(1, 1.0),
            &ToyLikelihood::gaussian(1, 2e-4).unwrap(),
            &GridSpec::square(-0.01, 0.01, 20_000, 1),
        )
        .unwrap();
        // the narrow grid truncates the prior but not the posterior
        assert!(!one.warnings.is_empty());
        assert!((10.0 * one.log_z - gaussian_log_evidence(10, 2e-4, 1.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn standard_normal_pair_in_one_dimension() {
        let g = grid_log_evidence(
            &gauss_prior(1, 1.0),
            &ToyLikelihood::gaussian(1, 1.0).unwrap(),
            &GridSpec::square(-20.0, 20.0, 100_000, 1),
        )
        .unwrap();
        assert!((g.log_z - gaussian_log_evidence(1, 1.0, 1.0).unwrap()).abs() < 1e-6);
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn flat_likelihood_gives_prior_mass() {
        let boxp = Prior::new(PriorSpec::uniform(vec![-1.0, 0.0], vec![2.0, 0.5])).unwrap();
        let g = grid_log_evidence(&boxp, &Flat(2), &GridSpec::square(-3.0, 3.0, 600, 2)).unwrap();
        assert!(g.log_z.abs() < 1e-9);
        let g = grid_log_evidence(&gauss_prior(2, 0.7), &Flat(2), &GridSpec::square(-8.0, 8.0, 400, 2)).unwrap();
        assert!(g.log_z.abs() < 1e-9);
    }

    #[test]
    fn agrees_with_closed_form_on_random_scales() {
        let mut rng = rng_from_seed(3);
        for _ in 0..10 {
            let sl: f64 = rng.random_range(0.3..3.0);
            let sp: f64 = rng.random_range(0.3..3.0);
            let half = 12.0 * sl.max(sp);
            for d in [1usize, 2] {
                let n = if d == 1 { 20_000 } else { 1000 };
                let g = grid_log_evidence(
                    &gauss_prior(d, sp),
                    &ToyLikelihood::gaussian(d, sl).unwrap(),
                    &GridSpec::square(-half, half, n, d),
                )
                .unwrap();
                let truth = gaussian_log_evidence(d, sl, sp).unwrap();
                assert!((g.log_z - truth).abs() < 1e-5, "d={d} sl={sl} sp={sp}: {} vs {truth}", g.log_z);
            }
        }
    }

    #[test]
    fn self_convergence_is_monotone() {
        // box prior edges make the integrand non-smooth, so errors shrink with n
        let prior = Prior::new(PriorSpec::uniform(vec![-1.3, -0.9], vec![1.1, 1.7])).unwrap();
        let lik = ToyLikelihood::gaussian(2, 1.0).unwrap();
        let z = |n: usize| grid_log_evidence(&prior, &lik, &GridSpec::square(-2.0, 2.0, n, 2)).unwrap().log_z;
        let zs: Vec<f64> = [500, 1000, 2000, 4000, 8000].iter().map(|&n| z(n)).collect();
        let diffs: Vec<f64> = zs.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in diffs.windows(2) {
            assert!(w[1] < w[0], "{diffs:?}");
        }
    }

    #[test]
    fn rosenbrock_reference_converges() {
        let prior = Prior::new(PriorSpec::uniform(vec![-10.0; 2], vec![10.0; 2])).unwrap();
        let lik = ToyLikelihood::rosenbrock(1.0, 100.0).unwrap();
        let g4 = grid_log_evidence(&prior, &lik, &GridSpec::square(-10.0, 10.0, 4000, 2)).unwrap();
        let g8 = grid_log_evidence(&prior, &lik, &GridSpec::square(-10.0, 10.0, 8000, 2)).unwrap();
        assert!((g4.log_z - g8.log_z).abs() < 1e-4);
        // integrating y first gives pi / sqrt(b) over the plane; the box cuts
        // the ridge y = x^2 off for |x| > sqrt(10), losing about 0.1%
        let closed = (std::f64::consts::PI / 10.0 / 400.0).ln();
        let lost = closed - g8.log_z;
        assert!(lost > 0.0 && lost < 2e-3, "{} vs {closed}", g8.log_z);
        assert_eq!(g4.resolution, "4000x4000");
    }

    #[test]
    fn invalid_grids() {
        let p = gauss_prior(3, 1.0);
        let l = ToyLikelihood::gaussian(3, 1.0).unwrap();
        assert!(matches!(
            grid_log_evidence(&p, &l, &GridSpec::square(-1.0, 1.0, 10, 3)),
            Err(Error::Unsupported(_))
        ));
        let p = gauss_prior(1, 1.0);
        let l = ToyLikelihood::gaussian(1, 1.0).unwrap();
        assert!(grid_log_evidence(&p, &l, &GridSpec::square(1.0, -1.0, 10, 1)).is_err());
        assert!(grid_log_evidence(&p, &l, &GridSpec::square(-1.0, 1.0, 1, 1)).is_err());
        assert!(matches!(
            grid_log_evidence(&p, &l, &GridSpec::square(-1.0, 1.0, 10, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
