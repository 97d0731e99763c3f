//! High-probability regret bounds for tuned learning rates.
//!
//! Each bound adds the deviation term `range * sqrt((n/2) ln(1/delta))` of
//! the realized loss around its conditional mean.

use crate::continuum::SuperTaskGrid;
use crate::error::{Error, Result};

fn check(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("confidence level delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn deviation(horizon: usize, delta: f64) -> f64 {
    (horizon as f64 / 2.0 * (1.0 / delta).ln()).sqrt()
}

/// `range * (sqrt(n ln|A| / 2) + sqrt((n/2) ln(1/delta)))` for round losses in `[0, range]`.
pub fn fixed_bound(horizon: usize, ln_legal: f64, range: f64, delta: f64) -> Result<f64> {
    check(delta)?;
    let n = horizon as f64;
    Ok(range * ((n * ln_legal.max(0.0) / 2.0).sqrt() + deviation(horizon, delta)))
}

/// `M sqrt(n (K ln|A| + K ln(n/K))) + M sqrt((n/2) ln(1/delta))`; with `K = 0` this is [`fixed_bound`].
pub fn tracking_bound(horizon: usize, ln_legal: f64, tasks: usize, max_switches: usize, delta: f64) -> Result<f64> {
    let m = tasks as f64;
    if max_switches == 0 || horizon == 0 {
        return fixed_bound(horizon, ln_legal, m, delta);
    }
    check(delta)?;
    let (n, k) = (horizon as f64, max_switches as f64);
    let inner = (k * ln_legal.max(0.0) + k * (n / k).ln()).max(0.0);
    Ok(m * (n * inner).sqrt() + m * deviation(horizon, delta))
}

/// `sqrt(n m ln(N ceil(1/eps)) / 2) + m n eps / 2 + sqrt((n/2) ln(1/delta))` against
/// every profile with at most `m` shifts anywhere in `[0, 1]`.
///
/// With `m = 0` the comparator class has `N` members and the first term is `sqrt(n ln N / 2)`.
pub fn continuum_bound(
    horizon: usize,
    actions: usize,
    grid: &SuperTaskGrid,
    max_shifts: usize,
    delta: f64,
) -> Result<f64> {
    check(delta)?;
    let n = horizon as f64;
    let m = max_shifts as f64;
    let ln_class =
        if max_shifts == 0 { (actions as f64).ln() } else { m * (actions as f64 * grid.cells() as f64).ln() };
    Ok((n * ln_class / 2.0).sqrt() + m * n * grid.eps() / 2.0 + deviation(horizon, delta))
}
