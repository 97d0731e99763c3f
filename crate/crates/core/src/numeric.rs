//! Log-domain arithmetic and sampling from unnormalized log weights.

use rand::Rng;

/// `ln(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Streaming log-sum-exp. Returns `-inf` for an empty iterator or all `-inf` inputs.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    // Two-pass over a buffer keeps the result independent of input magnitudes.
    let buf: Vec<f64> = values.into_iter().collect();
    log_sum_exp_slice(&buf)
}

pub fn log_sum_exp_slice(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
///
/// Returns `None` when every weight is zero (all `-inf`).
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = log_weights.iter().map(|&w| (w - max).exp()).sum();
    let mut target = rng.random::<f64>() * total;
    let mut last_positive = None;
    for (i, &w) in log_weights.iter().enumerate() {
        if w == f64::NEG_INFINITY {
            continue;
        }
        let p = (w - max).exp();
        if target < p {
            return Some(i);
        }
        target -= p;
        last_positive = Some(i);
    }
    // Rounding can leave a sliver of mass past the last bucket.
    last_positive
}

/// `ln C(n, k)`, with `-inf` when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        f64::NEG_INFINITY
    } else {
        statrs::function::factorial::ln_binomial(n, k)
    }
}

/// Relative error `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let scale = a.abs().max(b.abs());
    (a - b).abs() / scale
}
