//! Generalised Pareto tail-shape estimation for importance weights.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

/// Smallest weight count for which a tail fit is attempted.
pub const MIN_DRAWS: usize = 25;
/// Smallest tail size for which a tail fit is attempted.
pub const MIN_TAIL: usize = 5;

/// Outcome of the Pareto-k̂ diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParetoK<F> {
    Estimated(F),
    /// Weights equal within tolerance; reported as `k = -inf`.
    Degenerate,
    /// Too few (finite) weights to fit a tail.
    NotEstimable,
}

impl<F: Scalar> ParetoK<F> {
    /// `k`, `-inf` for degenerate weights, NaN if not estimable.
    pub fn value(&self) -> F {
        match self {
            ParetoK::Estimated(k) => *k,
            ParetoK::Degenerate => F::neg_infinity(),
            ParetoK::NotEstimable => F::nan(),
        }
    }

    pub fn to_f64(&self) -> ParetoK<f64> {
        match self {
            ParetoK::Estimated(k) => ParetoK::Estimated(k.as_f64()),
            ParetoK::Degenerate => ParetoK::Degenerate,
            ParetoK::NotEstimable => ParetoK::NotEstimable,
        }
    }
}

impl<F: Scalar> std::fmt::Display for ParetoK<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParetoK::Estimated(k) => write!(f, "{k}"),
            ParetoK::Degenerate => f.write_str("-inf"),
            ParetoK::NotEstimable => f.write_str("not-estimable"),
        }
    }
}

impl<F: Scalar> Serialize for ParetoK<F> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ParetoK::Estimated(k) => s.serialize_f64(k.as_f64()),
            ParetoK::Degenerate => s.serialize_str("-inf"),
            ParetoK::NotEstimable => s.serialize_str("not-estimable"),
        }
    }
}

impl<'de, F: Scalar> Deserialize<'de> for ParetoK<F> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(ParetoK::Estimated(F::lit(k))),
            Raw::Str(s) if s == "-inf" => Ok(ParetoK::Degenerate),
            Raw::Str(s) if s == "not-estimable" => Ok(ParetoK::NotEstimable),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid pareto k {s:?}"))),
        }
    }
}

/// Tail size `ceil(min(0.2 S, 3 sqrt(S)))` for `S` finite weights.
pub fn tail_size(finite: usize) -> usize {
    let s = finite as f64;
    (0.2 * s).min(3.0 * s.sqrt()).ceil() as usize
}

/// Pareto-k̂ of a set of log-weights. `-inf` entries (zero weights) are ignored.
///
/// When the finite log-weights span less than `degenerate_tol` the tail fit is
/// skipped and the degenerate marker is returned.
pub fn pareto_k<F: Scalar>(log_w: &[F], degenerate_tol: F) -> ParetoK<F> {
    let mut finite: Vec<F> = log_w.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return ParetoK::NotEstimable;
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (finite[0], finite[finite.len() - 1]);
    if hi - lo < degenerate_tol {
        return ParetoK::Degenerate;
    }
    let s = finite.len();
    if s < MIN_DRAWS {
        return ParetoK::NotEstimable;
    }
    let m = tail_size(s);
    if m < MIN_TAIL || m >= s {
        return ParetoK::NotEstimable;
    }
    let cutoff = (finite[s - m - 1] - hi).exp();
    let exceedances: Vec<F> = finite[s - m..].iter().map(|&v| (v - hi).exp() - cutoff).collect();
    if exceedances[m - 1] <= F::zero() {
        // flat tail: equivalent to a delta distribution
        return ParetoK::Degenerate;
    }
    ParetoK::Estimated(gpd_fit(&exceedances).0)
}

/// Zhang & Stephens profile-posterior estimate of the generalised Pareto shape
/// and scale for ascending, non-negative exceedances, with the weakly
/// informative shrinkage of `k` towards 0.5 used for importance weights.
pub fn gpd_fit<F: Scalar>(sorted: &[F]) -> (F, F) {
    let n = sorted.len();
    let nf = F::lit(n as f64);
    let prior_bs = F::lit(3.0);
    let prior_k = F::lit(10.0);
    let half = F::lit(0.5);
    let x_max = sorted[n - 1];
    // first-quartile anchor; skip zero exceedances at the bottom of the tail
    let quartile_idx = ((n as f64 / 4.0 + 0.5) as usize).saturating_sub(1);
    let mut x_q = sorted[quartile_idx];
    if x_q <= F::zero() {
        x_q = sorted.iter().copied().find(|&v| v > F::zero()).unwrap_or(x_max);
    }

    let m = 30 + (n as f64).sqrt() as usize;
    let mut theta = Vec::with_capacity(m);
    let mut profile = Vec::with_capacity(m);
    for j in 1..=m {
        let b = F::one() / x_max
            + (F::one() - (F::lit(m as f64) / (F::lit(j as f64) - half)).sqrt()) / (prior_bs * x_q);
        let k: F = sorted.iter().map(|&x| (-b * x).ln_1p()).sum::<F>() / nf;
        theta.push(b);
        profile.push(nf * ((-(b / k)).ln() - k - F::one()));
    }
    // normalised posterior weights over the theta grid
    let mut w: Vec<F> = profile
        .iter()
        .map(|&li| {
            let s: F = profile.iter().map(|&lj| (lj - li).exp()).sum();
            F::one() / s
        })
        .collect();
    let eps = F::lit(10.0) * F::epsilon();
    for (wi, li) in w.iter_mut().zip(&profile) {
        if !(*wi >= eps) || !li.is_finite() {
            *wi = F::zero();
        }
    }
    let total: F = w.iter().copied().sum();
    let b_post: F = theta.iter().zip(&w).map(|(&b, &wi)| b * wi).sum::<F>() / total;
    let k_post: F = sorted.iter().map(|&x| (-b_post * x).ln_1p()).sum::<F>() / nf;
    let sigma = -k_post / b_post;
    let k_adj = (nf * k_post + prior_k * half) / (nf + prior_k);
    (k_adj, sigma)
}
