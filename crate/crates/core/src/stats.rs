//! Deterministic (non-random) statistics: stream means, pooled sample
//! moments, exceedance counts, standardized counts, and the classic
//! ordered-p-value form of higher criticism.

use crate::error::{Error, Result};
use crate::matrix::StreamMatrix;

/// Pooled mean and population variance (divisor `n * t`, not `n * t - 1`)
/// of all matrix entries. The test statistics standardize with exactly this
/// variance, so the divisor is load-bearing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMoments {
    pub mean: f64,
    pub variance: f64,
}

impl SampleMoments {
    /// Population standard deviation.
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Per-stream averages `Y_i = (1/t) Σ_j x[i, j]`.
pub fn stream_means(x: &StreamMatrix) -> Vec<f64> {
    let t = x.t() as f64;
    x.rows().map(|row| row.iter().sum::<f64>() / t).collect()
}

/// Pooled moments of all `n * t` entries, two-pass for accuracy.
pub fn sample_moments(x: &StreamMatrix) -> SampleMoments {
    let values = x.values();
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    SampleMoments { mean, variance }
}

/// Number of means at or above `threshold` (`strict` switches to `>`).
pub fn count_exceedances(means: &[f64], threshold: f64, strict: bool) -> usize {
    if strict {
        means.iter().filter(|&&m| m > threshold).count()
    } else {
        means.iter().filter(|&&m| m >= threshold).count()
    }
}

/// Standardized exceedance count `(N - n·p) / sqrt(n·p·(1 - p))`.
///
/// When the denominator vanishes (`p` is exactly 0 or 1): returns 0 if the
/// numerator also vanishes (the 0/0 convention), otherwise signals
/// [`Error::DegenerateStandardization`] so the caller can decide — returning
/// ±∞ silently would hide misuse of hand-supplied probabilities.
pub fn standardized_count(count: usize, n: usize, p: f64) -> Result<f64> {
    if n == 0 || count > n {
        return Err(Error::DomainError(format!(
            "count {count} must be at most n = {n} (n >= 1)"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::DomainError(format!("p = {p} outside [0, 1]")));
    }
    let numerator = count as f64 - n as f64 * p;
    if p == 0.0 || p == 1.0 {
        if numerator == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::DegenerateStandardization { count, n, p });
    }
    Ok(numerator / (n as f64 * p * (1.0 - p)).sqrt())
}

/// Classic higher criticism over ordered p-values:
/// `max over i with p_(i) < 1/2 of sqrt(n)·(i/n − p_(i)) / sqrt(p_(i)(1 − p_(i)))`.
///
/// Returns `-inf` when no p-value is below 1/2 (the empty max carries no
/// evidence). Terms with `p_(i) = 0` have a zero denominator and are
/// skipped, consistent with the degenerate-standardization rule.
pub fn classic_hc(pvals: &[f64]) -> Result<f64> {
    if pvals.is_empty() {
        return Err(Error::DomainError("need at least one p-value".into()));
    }
    if let Some(&bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::DomainError(format!("p-value {bad} outside [0, 1]")));
    }
    let n = pvals.len() as f64;
    let mut sorted = pvals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = f64::NEG_INFINITY;
    for (idx, &p) in sorted.iter().enumerate() {
        if p >= 0.5 {
            break;
        }
        if p == 0.0 {
            continue;
        }
        let i = (idx + 1) as f64;
        let term = n.sqrt() * (i / n - p) / (p * (1.0 - p)).sqrt();
        best = best.max(term);
    }
    Ok(best)
}
