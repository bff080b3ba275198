//! Log-space accumulation, small dense linear algebra and seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Two-pass `log(sum(exp(x)))` in slice order. Returns `-inf` for an empty
/// slice or when every entry is `-inf`; propagates `+inf` and NaN.
pub fn log_sum_exp<F: Scalar>(values: &[F]) -> F {
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() || !max.is_finite() {
        if values.iter().any(|v| v.is_nan()) {
            return F::nan();
        }
        return max;
    }
    let mut sum = F::zero();
    for &v in values {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// `log_sum_exp` over a canonical (ascending) ordering of the values, so the
/// result does not depend on the order the caller stored them in.
pub fn log_sum_exp_sorted<F: Scalar>(values: &[F]) -> F {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    log_sum_exp(&sorted)
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp<F: Scalar>(a: F, b: F) -> F {
    let max = a.max(b);
    if max == F::neg_infinity() {
        return max;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

pub fn mean<F: Scalar>(values: &[F]) -> F {
    if values.is_empty() {
        return F::nan();
    }
    values.iter().copied().sum::<F>() / F::lit(values.len() as f64)
}

/// Unbiased sample standard deviation (denominator `n - 1`). Exactly zero
/// for identical values.
pub fn sample_std<F: Scalar>(values: &[F]) -> F {
    if values.len() < 2 {
        return F::zero();
    }
    // shifting by the first value keeps the mean of equal values exact
    let shift = values[0];
    let d: Vec<F> = values.iter().map(|&v| v - shift).collect();
    let m = mean(&d);
    let ss: F = d.iter().map(|&v| (v - m) * (v - m)).sum();
    (ss / F::lit((values.len() - 1) as f64)).sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric `d x d` row-major matrix.
/// Returns `None` if a pivot is not strictly positive.
pub fn cholesky<F: Scalar>(a: &[F], d: usize) -> Option<Vec<F>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![F::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > F::zero()) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` for lower-triangular `L` in place.
pub fn forward_substitute<F: Scalar>(l: &[F], d: usize, b: &mut [F]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// `log det(A)` from its Cholesky factor.
pub fn log_det_from_cholesky<F: Scalar>(l: &[F], d: usize) -> F {
    let two = F::lit(2.0);
    (0..d).map(|i| two * l[i * d + i].ln()).sum()
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for the `index`-th task in the stream named `tag`.
pub fn sub_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(master);
    for b in tag.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ mix(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
