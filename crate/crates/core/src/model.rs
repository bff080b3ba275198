//! Log-density abstractions: normalised prior families, the toy likelihoods
//! and an instrumented wrapper that counts evaluations.
//!
//! Every density returns either a finite value or `-inf` (zero density).

use std::f64::consts::{LN_10, PI};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Prior,
    Likelihood,
}

/// A log-density over a fixed-dimension parameter vector.
pub trait DensityModel<F: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;

    fn kind(&self) -> DensityKind;

    /// Evaluates without checking the length of `theta`.
    fn log_density_unchecked(&self, theta: &[F]) -> F;

    fn log_density(&self, theta: &[F]) -> Result<F> {
        check_dim(self.dimension(), theta.len())?;
        Ok(self.log_density_unchecked(theta))
    }

    fn in_support(&self, theta: &[F]) -> Result<bool> {
        Ok(self.log_density(theta)? > F::neg_infinity())
    }
}

impl<F: Scalar, M: DensityModel<F> + ?Sized> DensityModel<F> for &M {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn kind(&self) -> DensityKind {
        (**self).kind()
    }
    fn log_density_unchecked(&self, theta: &[F]) -> F {
        (**self).log_density_unchecked(theta)
    }
}

/// `log L(theta) + log p(theta)`, short-circuiting to `-inf` outside the prior support.
pub fn unnorm_log_posterior<F: Scalar>(
    prior: &dyn DensityModel<F>,
    likelihood: &dyn DensityModel<F>,
    theta: &[F],
) -> Result<F> {
    check_dim(prior.dimension(), theta.len())?;
    check_dim(likelihood.dimension(), theta.len())?;
    let lp = prior.log_density_unchecked(theta);
    if lp == F::neg_infinity() {
        return Ok(lp);
    }
    let ll = likelihood.log_density_unchecked(theta);
    if ll == F::neg_infinity() {
        return Ok(ll);
    }
    Ok(lp + ll)
}

/// How a stored parameter relates to the variable its prior family is defined on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coordinate {
    /// The parameter is the variable itself.
    #[default]
    Linear,
    /// The parameter is `log10` of the variable; densities include the Jacobian.
    Log10,
}

impl Coordinate {
    fn is_linear(&self) -> bool {
        *self == Coordinate::Linear
    }
}

/// Serialisable description of a product prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec<F> {
    Gaussian {
        mean: Vec<F>,
        std: Vec<F>,
        #[serde(default, skip_serializing_if = "Coordinate::is_linear")]
        coordinate: Coordinate,
    },
    #[serde(alias = "uniform-box")]
    Uniform {
        lower: Vec<F>,
        upper: Vec<F>,
        #[serde(default, skip_serializing_if = "Coordinate::is_linear")]
        coordinate: Coordinate,
    },
    /// Uniform in `log10` of the variable on `[lower, upper]`, both bounds positive.
    LogUniform {
        lower: Vec<F>,
        upper: Vec<F>,
        #[serde(default, skip_serializing_if = "Coordinate::is_linear")]
        coordinate: Coordinate,
    },
}

impl<F: Scalar> PriorSpec<F> {
    pub fn isotropic_gaussian(dimension: usize, mean: F, std: F) -> Self {
        PriorSpec::Gaussian {
            mean: vec![mean; dimension],
            std: vec![std; dimension],
            coordinate: Coordinate::Linear,
        }
    }

    pub fn gaussian(mean: Vec<F>, std: Vec<F>) -> Self {
        PriorSpec::Gaussian {
            mean,
            std,
            coordinate: Coordinate::Linear,
        }
    }

    pub fn uniform(lower: Vec<F>, upper: Vec<F>) -> Self {
        PriorSpec::Uniform {
            lower,
            upper,
            coordinate: Coordinate::Linear,
        }
    }

    pub fn log_uniform(lower: Vec<F>, upper: Vec<F>, coordinate: Coordinate) -> Self {
        PriorSpec::LogUniform {
            lower,
            upper,
            coordinate,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            PriorSpec::Gaussian { mean, .. } => mean.len(),
            PriorSpec::Uniform { lower, .. } | PriorSpec::LogUniform { lower, .. } => lower.len(),
        }
    }

    pub fn coordinate(&self) -> Coordinate {
        match self {
            PriorSpec::Gaussian { coordinate, .. }
            | PriorSpec::Uniform { coordinate, .. }
            | PriorSpec::LogUniform { coordinate, .. } => *coordinate,
        }
    }

    /// Short human-readable label used in reports.
    pub fn describe(&self) -> String {
        fn summary<F: Scalar>(v: &[F]) -> String {
            match v.first() {
                Some(first) if v.iter().all(|x| x == first) => format!("{first}"),
                _ => format!("{:?}", v.iter().map(|x| x.as_f64()).collect::<Vec<_>>()),
            }
        }
        let coord = match self.coordinate() {
            Coordinate::Linear => "",
            Coordinate::Log10 => " [log10]",
        };
        match self {
            PriorSpec::Gaussian { mean, std, .. } => {
                format!("gaussian(mean={}, std={}){coord}", summary(mean), summary(std))
            }
            PriorSpec::Uniform { lower, upper, .. } => {
                format!("uniform({}, {}){coord}", summary(lower), summary(upper))
            }
            PriorSpec::LogUniform { lower, upper, .. } => {
                format!("log-uniform({}, {}){coord}", summary(lower), summary(upper))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Family<F> {
    Gaussian { mean: Vec<F>, std: Vec<F> },
    Uniform { lower: Vec<F>, upper: Vec<F> },
    LogUniform { lower: Vec<F>, upper: Vec<F> },
}

/// A validated, normalised product prior.
#[derive(Debug, Clone)]
pub struct Prior<F> {
    spec: PriorSpec<F>,
    family: Family<F>,
    coordinate: Coordinate,
    /// Additive normalising constant of the density in the family's own variable.
    log_norm: F,
    dimension: usize,
}

impl<F: Scalar> Prior<F> {
    pub fn new(spec: PriorSpec<F>) -> Result<Self> {
        let dimension = spec.dimension();
        if dimension == 0 {
            return Err(Error::Spec("prior must have at least one dimension".into()));
        }
        let coordinate = spec.coordinate();
        let ln2pi = F::lit((2.0 * PI).ln());
        let half = F::lit(0.5);
        let (family, log_norm) = match &spec {
            PriorSpec::Gaussian { mean, std, .. } => {
                same_len(mean, std, "mean", "std")?;
                if mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Spec("gaussian mean must be finite".into()));
                }
                if std.iter().any(|s| !(*s > F::zero()) || !s.is_finite()) {
                    return Err(Error::Spec("gaussian std must be positive in every dimension".into()));
                }
                if coordinate == Coordinate::Log10 {
                    return Err(Error::Spec(
                        "a gaussian prior has mass on non-positive values and cannot be used in log10 coordinates".into(),
                    ));
                }
                let log_norm = std.iter().map(|&s| -(half * ln2pi) - s.ln()).sum();
                (
                    Family::Gaussian {
                        mean: mean.clone(),
                        std: std.clone(),
                    },
                    log_norm,
                )
            }
            PriorSpec::Uniform { lower, upper, .. } => {
                check_box(lower, upper)?;
                if coordinate == Coordinate::Log10 && lower.iter().any(|l| *l < F::zero()) {
                    return Err(Error::Spec("uniform prior in log10 coordinates needs lower >= 0".into()));
                }
                let log_norm = lower.iter().zip(upper).map(|(&l, &u)| -(u - l).ln()).sum();
                (
                    Family::Uniform {
                        lower: lower.clone(),
                        upper: upper.clone(),
                    },
                    log_norm,
                )
            }
            PriorSpec::LogUniform { lower, upper, .. } => {
                check_box(lower, upper)?;
                if lower.iter().any(|l| !(*l > F::zero())) {
                    return Err(Error::Spec("log-uniform prior requires strictly positive bounds".into()));
                }
                // density in log10 space; the linear-space Jacobian is applied at evaluation
                let log_norm = lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| -(u.log10() - l.log10()).ln())
                    .sum();
                (
                    Family::LogUniform {
                        lower: lower.clone(),
                        upper: upper.clone(),
                    },
                    log_norm,
                )
            }
        };
        Ok(Prior {
            spec,
            family,
            coordinate,
            log_norm,
            dimension,
        })
    }

    pub fn spec(&self) -> &PriorSpec<F> {
        &self.spec
    }

    /// Per-dimension support bounds in the stored coordinate (possibly infinite).
    pub fn support_bounds(&self) -> Vec<(F, F)> {
        let inf = F::infinity();
        let to_coord = |x: F| match self.coordinate {
            Coordinate::Linear => x,
            Coordinate::Log10 if x == F::zero() => -inf,
            Coordinate::Log10 => x.log10(),
        };
        match &self.family {
            Family::Gaussian { mean, .. } => vec![(-inf, inf); mean.len()],
            Family::Uniform { lower, upper } | Family::LogUniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| (to_coord(l), to_coord(u)))
                .collect(),
        }
    }

    /// Draws one parameter vector from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let mut x: Vec<F> = match &self.family {
            Family::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(&m, &s)| m + s * F::lit(rng.sample::<f64, _>(StandardNormal)))
                .collect(),
            Family::Uniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| {
                    let (l, u) = (l.as_f64(), u.as_f64());
                    loop {
                        let v = l + (u - l) * rng.random::<f64>();
                        // zero maps to -inf in log10 coordinates
                        if self.coordinate == Coordinate::Linear || v > 0.0 {
                            break F::lit(v);
                        }
                    }
                })
                .collect(),
            Family::LogUniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| {
                    let (a, b) = (l.as_f64().log10(), u.as_f64().log10());
                    F::lit(10f64.powf(a + (b - a) * rng.random::<f64>()))
                })
                .collect(),
        };
        if self.coordinate == Coordinate::Log10 {
            for v in x.iter_mut() {
                *v = v.log10();
            }
        }
        x
    }

    fn log_density_linear(&self, x: &[F]) -> F {
        let ninf = F::neg_infinity();
        match &self.family {
            Family::Gaussian { mean, std } => {
                let half = F::lit(0.5);
                let q: F = x
                    .iter()
                    .zip(mean.iter().zip(std))
                    .map(|(&xi, (&m, &s))| {
                        let z = (xi - m) / s;
                        z * z
                    })
                    .sum();
                self.log_norm - half * q
            }
            Family::Uniform { lower, upper } => {
                if inside(x, lower, upper) {
                    self.log_norm
                } else {
                    ninf
                }
            }
            Family::LogUniform { lower, upper } => {
                if !inside(x, lower, upper) {
                    return ninf;
                }
                let ln_ln10 = F::lit(LN_10.ln());
                let jac: F = x.iter().map(|&xi| xi.ln() + ln_ln10).sum();
                self.log_norm - jac
            }
        }
    }
}

fn inside<F: Scalar>(x: &[F], lower: &[F], upper: &[F]) -> bool {
    x.iter()
        .zip(lower.iter().zip(upper))
        .all(|(&xi, (&l, &u))| xi >= l && xi <= u)
}

fn same_len<F>(a: &[F], b: &[F], na: &str, nb: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Spec(format!(
            "{na} has {} entries but {nb} has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_box<F: Scalar>(lower: &[F], upper: &[F]) -> Result<()> {
    same_len(lower, upper, "lower", "upper")?;
    for (&l, &u) in lower.iter().zip(upper) {
        if !l.is_finite() || !u.is_finite() || !(l < u) {
            return Err(Error::Spec(format!(
                "box bounds must be finite with lower < upper (got {l}, {u})"
            )));
        }
    }
    Ok(())
}

impl<F: Scalar> DensityModel<F> for Prior<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Prior
    }

    fn log_density_unchecked(&self, theta: &[F]) -> F {
        match self.coordinate {
            Coordinate::Linear => self.log_density_linear(theta),
            Coordinate::Log10 => {
                if let Family::LogUniform { lower, upper } = &self.family {
                    // exactly uniform in the stored coordinate
                    let inside = theta
                        .iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(&t, (&l, &u))| t >= l.log10() && t <= u.log10());
                    return if inside { self.log_norm } else { F::neg_infinity() };
                }
                let ln10 = F::lit(LN_10);
                let ln_ln10 = F::lit(LN_10.ln());
                let ten = F::lit(10.0);
                let x: Vec<F> = theta.iter().map(|&t| ten.powf(t)).collect();
                let base = self.log_density_linear(&x);
                if base == F::neg_infinity() {
                    return base;
                }
                base + theta.iter().map(|&t| t * ln10 + ln_ln10).sum::<F>()
            }
        }
    }
}

/// The two likelihoods used by the toy experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ToyLikelihood<F> {
    /// Normalised isotropic zero-mean Gaussian `N(theta; 0, sigma^2 I)`.
    Gaussian { dimension: usize, sigma: F },
    /// `-[(a - x)^2 + b (y - x^2)^2]`, maximised at `(a, a^2)` with value 0.
    Rosenbrock { a: F, b: F },
}

impl<F: Scalar> ToyLikelihood<F> {
    pub fn gaussian(dimension: usize, sigma: F) -> Result<Self> {
        let l = ToyLikelihood::Gaussian { dimension, sigma };
        l.validate()?;
        Ok(l)
    }

    pub fn rosenbrock(a: F, b: F) -> Result<Self> {
        let l = ToyLikelihood::Rosenbrock { a, b };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ToyLikelihood::Gaussian { dimension, sigma } => {
                if *dimension == 0 {
                    return Err(Error::Spec("gaussian likelihood needs dimension >= 1".into()));
                }
                if !(*sigma > F::zero()) || !sigma.is_finite() {
                    return Err(Error::Spec("gaussian likelihood sigma must be positive".into()));
                }
            }
            ToyLikelihood::Rosenbrock { a, b } => {
                if !a.is_finite() || !(*b > F::zero()) || !b.is_finite() {
                    return Err(Error::Spec("rosenbrock needs finite a and b > 0".into()));
                }
            }
        }
        Ok(())
    }
}

impl<F: Scalar> DensityModel<F> for ToyLikelihood<F> {
    fn dimension(&self) -> usize {
        match self {
            ToyLikelihood::Gaussian { dimension, .. } => *dimension,
            ToyLikelihood::Rosenbrock { .. } => 2,
        }
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Likelihood
    }

    fn log_density_unchecked(&self, theta: &[F]) -> F {
        match self {
            ToyLikelihood::Gaussian { dimension, sigma } => {
                let var = *sigma * *sigma;
                let sq: F = theta.iter().map(|&t| t * t).sum();
                let d = F::lit(*dimension as f64);
                -(d / F::lit(2.0)) * (F::lit(2.0 * PI) * var).ln() - sq / (F::lit(2.0) * var)
            }
            ToyLikelihood::Rosenbrock { a, b } => {
                let (x, y) = (theta[0], theta[1]);
                let u = *a - x;
                let v = y - x * x;
                -(u * u + *b * v * v)
            }
        }
    }
}

/// Wraps a density and counts how many times it is evaluated.
#[derive(Debug)]
pub struct Counted<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M> Counted<M> {
    pub fn new(inner: M) -> Self {
        Counted {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<F: Scalar, M: DensityModel<F>> DensityModel<F> for Counted<M> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn kind(&self) -> DensityKind {
        self.inner.kind()
    }

    fn log_density_unchecked(&self, theta: &[F]) -> F {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.log_density_unchecked(theta)
    }
}
