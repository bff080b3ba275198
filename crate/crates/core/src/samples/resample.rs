//! Sampling-importance-resampling over pooled draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ChainSet;
use crate::diagnostics::ImportanceWeights;
use crate::error::{Error, Result};
use crate::math::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleScheme {
    /// i.i.d. draws from the weighted empirical distribution.
    #[default]
    Multinomial,
    /// One uniform offset, evenly spaced positions; lower variance.
    Systematic,
}

#[derive(Debug, Clone)]
pub struct ResampleResult<F> {
    pub draws: ChainSet<F>,
    /// Pooled index into the source set of every resampled draw, in output order.
    pub source_indices: Vec<usize>,
}

/// Picks `n` indices with probabilities proportional to `weights` (non-negative,
/// not necessarily normalised).
pub fn resample_indices<F: Scalar, R: Rng + ?Sized>(
    weights: &[F],
    n: usize,
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(*w >= F::zero()) || !w.is_finite()) {
        return Err(Error::input("resampling weights must be finite and non-negative"));
    }
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0f64;
    for w in weights {
        acc += w.as_f64();
        cumulative.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::DegenerateWeights("every weight is zero".into()));
    }
    let last_positive = weights.iter().rposition(|w| *w > F::zero()).unwrap();
    let pick = |u: f64| cumulative.partition_point(|&c| c <= u).min(last_positive);
    let out = match scheme {
        ResampleScheme::Multinomial => (0..n).map(|_| pick(rng.random::<f64>() * acc)).collect(),
        ResampleScheme::Systematic => {
            let offset: f64 = rng.random();
            (0..n)
                .map(|i| pick((i as f64 + offset) / n as f64 * acc))
                .collect()
        }
    };
    Ok(out)
}

/// Splits `n` draws over chains in proportion to `sizes` (exactly `sizes` when
/// they already add to `n`).
pub(crate) fn partition(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == n {
        return sizes.to_vec();
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| s * n / total).collect();
    let mut rest = n - out.iter().sum::<usize>();
    for v in out.iter_mut() {
        if rest == 0 {
            break;
        }
        *v += 1;
        rest -= 1;
    }
    out.retain(|&s| s > 0);
    out
}

/// Resamples `samples` with replacement according to `weights`.
///
/// The output has `n_out` draws (default: the input count), assigned in order to
/// chains whose sizes mirror the input chains.
pub fn sir_resample<F: Scalar>(
    samples: &ChainSet<F>,
    weights: &ImportanceWeights<F>,
    seed: u64,
    scheme: ResampleScheme,
    n_out: Option<usize>,
) -> Result<ResampleResult<F>> {
    if weights.len() != samples.n_draws() {
        return Err(Error::input(format!(
            "{} weights for {} draws",
            weights.len(),
            samples.n_draws()
        )));
    }
    let n = n_out.unwrap_or(samples.n_draws());
    if n == 0 {
        return Err(Error::input("cannot resample zero draws"));
    }
    let mut rng = rng_from_seed(seed);
    let source_indices = resample_indices(weights.normalized(), n, scheme, &mut rng)?;
    let sizes = partition(&samples.chain_lengths(), n);
    let draws = samples.gather(&source_indices, &sizes)?;
    Ok(ResampleResult {
        draws,
        source_indices,
    })
}
