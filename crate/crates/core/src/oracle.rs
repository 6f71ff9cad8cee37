//! Baselines that know (or approximate) the null distribution.
//!
//! The permutation tests in [`crate::permute`] need nothing but
//! exchangeability. The functions here give them something to be compared
//! against: the detection boundary [`rho_star`] and the signal
//! parametrization [`signal_theta`] describe the sparse-anomaly regime; the
//! oracle test [`oracle_hc_test`] plugs in the exact null tail probability
//! `p_q` (standard normal or Gamma stream means) and calibrates by
//! simulating from the known null; and [`approx_hc_test`] runs the
//! permutation pipeline with `p_q` replaced by its normal approximation.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::matrix::StreamMatrix;
use crate::permute::{hat_t_sorted, hc_permutation_test, PermutationPlan, PqSource};
use crate::result::{Method, TestResult};
use crate::rng::replicate_rng;
use crate::special::{normal_sf, reg_gamma_upper};
use crate::stats::stream_means;

/// A known null distribution for a single observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullModel {
    /// Standard normal observations: mean 0, variance 1.
    NormalUnit,
    /// Exponential observations with rate `lambda0` (mean `1/lambda0`).
    Exponential { lambda0: f64 },
}

impl NullModel {
    /// Null mean of one observation.
    pub fn mu0(&self) -> f64 {
        match self {
            NullModel::NormalUnit => 0.0,
            NullModel::Exponential { lambda0 } => 1.0 / lambda0,
        }
    }

    /// Null variance of one observation.
    pub fn sigma0_sq(&self) -> f64 {
        match self {
            NullModel::NormalUnit => 1.0,
            NullModel::Exponential { lambda0 } => 1.0 / (lambda0 * lambda0),
        }
    }

    fn validate(&self) -> Result<()> {
        if let NullModel::Exponential { lambda0 } = self {
            if !(lambda0.is_finite() && *lambda0 > 0.0) {
                return Err(Error::DomainError(format!(
                    "exponential rate must be positive and finite, got {lambda0}"
                )));
            }
        }
        Ok(())
    }

    /// Exact null probability that a stream mean of `t` observations clears
    /// the `q`-threshold `μ₀ + σ₀ √(2 q log(n) / t)`.
    pub fn oracle_pq(&self, q: f64, n: usize, t: usize) -> f64 {
        match self {
            NullModel::NormalUnit => oracle_pq_normal(q, n),
            NullModel::Exponential { lambda0 } => oracle_pq_gamma(q, n, t, *lambda0),
        }
    }
}

/// The sparse-anomaly regime: `s = ⌈n^(1−β)⌉` anomalous streams whose
/// natural parameter is shifted by `θ`, a multiple `τ` of the asymptotically
/// minimal detectable shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityParams {
    /// Sparsity exponent.
    pub beta: f64,
    /// Implied signal-strength multiplier `τ² ρ*(β)`.
    pub r: f64,
    /// Multiple of the minimal detectable shift.
    pub tau: f64,
    /// Number of anomalous streams.
    pub s: usize,
    /// Natural-parameter shift: the mean shift for the normal model, the
    /// rate reduction for the exponential model.
    pub theta: f64,
    /// Null variance of one observation.
    pub sigma0_sq: f64,
}

/// Detection boundary `ρ*(β)` separating detectable from undetectable
/// signal strengths: `β − 1/2` up to `β = 3/4`, then `(1 − √(1−β))²`.
pub fn rho_star(beta: f64) -> Result<f64> {
    if !(beta.is_finite() && 0.5 < beta && beta < 1.0) {
        return Err(Error::DomainError(format!(
            "sparsity exponent {beta} outside (1/2, 1)"
        )));
    }
    Ok(if beta <= 0.75 {
        beta - 0.5
    } else {
        let root = (1.0 - beta).sqrt();
        (1.0 - root) * (1.0 - root)
    })
}

/// Ceiling that tolerates float noise from the round trip
/// `β = 1 − log s / log n  →  n^(1−β)`, which should recover the integer `s`
/// but can land an ulp above or below it.
fn ceil_with_tolerance(v: f64) -> usize {
    (v - 1e-9).ceil().max(1.0) as usize
}

/// Resolve the signal shift `θ_τ = τ √(2 ρ*(β) log(n) / (σ₀² t))` and the
/// anomaly count `s = ⌈n^(1−β)⌉` for a model.
///
/// For the exponential model the anomalous rate is `λ₀ − θ`, so a shift at
/// or past `λ₀` leaves no valid alternative (`SignalOutOfRange`); shifts are
/// unconstrained for the normal model, where `θ` is the mean shift.
pub fn signal_theta(
    tau: f64,
    beta: f64,
    n: usize,
    t: usize,
    model: NullModel,
) -> Result<SparsityParams> {
    model.validate()?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::DomainError(format!("signal multiple {tau} must be >= 0")));
    }
    if n < 2 || t < 1 {
        return Err(Error::DomainError(format!(
            "need n >= 2 streams and t >= 1 observations, got n={n}, t={t}"
        )));
    }
    let rho = rho_star(beta)?;
    let sigma0_sq = model.sigma0_sq();
    let theta = tau * (2.0 * rho * (n as f64).ln() / (sigma0_sq * t as f64)).sqrt();
    if let NullModel::Exponential { lambda0 } = model {
        if theta >= lambda0 {
            return Err(Error::SignalOutOfRange { theta, limit: lambda0 });
        }
    }
    let s = ceil_with_tolerance((n as f64).powf(1.0 - beta));
    Ok(SparsityParams { beta, r: tau * tau * rho, tau, s, theta, sigma0_sq })
}

/// Null probability that a standard-normal stream mean clears the
/// `q`-threshold: `1 − Φ(√(2 q log n))`.
pub fn oracle_pq_normal(q: f64, n: usize) -> f64 {
    debug_assert!(q >= 0.0 && n >= 2);
    normal_sf((2.0 * q * (n as f64).ln()).sqrt())
}

/// Null probability that an exponential stream mean clears the
/// `q`-threshold.
///
/// With rate `λ₀`, the scaled mean `t Ȳ λ₀` is Gamma(`t`, 1), so the
/// probability is the regularized upper incomplete gamma
/// `Q(t, t + √(2 q t log n))` — the rate cancels out of the standardized
/// threshold.
pub fn oracle_pq_gamma(q: f64, n: usize, t: usize, lambda0: f64) -> f64 {
    debug_assert!(q >= 0.0 && n >= 2 && t >= 1 && lambda0 > 0.0);
    reg_gamma_upper(t as f64, t as f64 + (2.0 * q * t as f64 * (n as f64).ln()).sqrt())
}

fn oracle_scan_setup(model: NullModel, grid: &Grid, n: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let mu0 = model.mu0();
    let sigma0 = model.sigma0_sq().sqrt();
    let log_n = (n as f64).ln();
    let thresholds = grid
        .qs()
        .iter()
        .map(|&q| mu0 + sigma0 * (2.0 * q * log_n / t as f64).sqrt())
        .collect();
    let pq = grid.qs().iter().map(|&q| model.oracle_pq(q, n, t)).collect();
    (thresholds, pq)
}

/// The oracle scan statistic `max_q (N_q − n p_q) / √(n p_q (1 − p_q))`,
/// with `N_q` counted against the known-null threshold
/// `μ₀ + σ₀ √(2 q log(n) / t)` and `p_q` the exact null tail probability.
pub fn oracle_statistic(x: &StreamMatrix, model: NullModel, grid: &Grid) -> Result<f64> {
    model.validate()?;
    if x.n() < 2 {
        return Err(Error::StatisticDegenerate {
            reason: "the scan needs at least two streams".into(),
        });
    }
    let (thresholds, pq) = oracle_scan_setup(model, grid, x.n(), x.t());
    let mut means = stream_means(x);
    means.sort_unstable_by(f64::total_cmp);
    Ok(hat_t_sorted(&means, &thresholds, &pq))
}

type MeansSampler = Box<dyn Fn(&mut rand_chacha::ChaCha8Rng, &mut Vec<f64>) + Sync>;

/// Higher-criticism test with a fully known null: exact `p_q`, known-null
/// thresholds, and a p-value calibrated by simulating `calib_samples` null
/// data sets and applying the add-one estimator.
///
/// Simulation happens at the stream-mean level — `N(0, 1/t)` for the normal
/// model, `Gamma(t, rate t λ₀)` for the exponential model — which has
/// exactly the distribution of the mean of `t` null observations, since the
/// statistic depends on a data set only through its stream means. Replicate
/// `b` draws from RNG substream `b` of `seed`, mirroring the permutation
/// engine's seeding, so results are reproducible under any thread count.
pub fn oracle_hc_test(
    x: &StreamMatrix,
    model: NullModel,
    grid: &Grid,
    calib_samples: usize,
    seed: u64,
) -> Result<TestResult> {
    let start = Instant::now();
    if calib_samples == 0 {
        return Err(Error::DomainError("need at least one calibration sample".into()));
    }
    let statistic = oracle_statistic(x, model, grid)?;
    let n = x.n();
    let t = x.t();
    let (thresholds, pq) = oracle_scan_setup(model, grid, n, t);

    let draw_means: MeansSampler = match model {
        NullModel::NormalUnit => {
            let scale = 1.0 / (t as f64).sqrt();
            Box::new(move |rng, out| {
                out.clear();
                out.extend((0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
            })
        }
        NullModel::Exponential { lambda0 } => {
            let gamma = Gamma::new(t as f64, 1.0 / (t as f64 * lambda0))
                .map_err(|e| Error::Internal(format!("gamma sampler: {e}")))?;
            Box::new(move |rng, out| {
                out.clear();
                out.extend((0..n).map(|_| gamma.sample(rng)));
            })
        }
    };

    let exceed = (0..calib_samples)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |means, rep| {
                let mut rng = replicate_rng(seed, rep as u64);
                draw_means(&mut rng, means);
                means.sort_unstable_by(f64::total_cmp);
                usize::from(hat_t_sorted(means, &thresholds, &pq) >= statistic)
            },
        )
        .sum::<usize>();

    Ok(TestResult {
        method: Method::OracleHc,
        statistic,
        p_value: (1 + exceed) as f64 / (calib_samples + 1) as f64,
        replicates: calib_samples,
        seed,
        grid_spacing: grid.spacing(),
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Permutation-calibrated higher criticism with the normal approximation
/// `p_q^Φ = 1 − Φ(√(2 q log n))` in place of the permutation estimate
/// `P̂_q`, in both the observed and the permuted statistics. Everything
/// else — grid, thresholds, permutation sample, add-one p-value — matches
/// [`crate::permute::perm_hc_test`].
pub fn approx_hc_test(x: &StreamMatrix, plan: &PermutationPlan, d: f64) -> Result<TestResult> {
    hc_permutation_test(x, plan, d, PqSource::NormalApprox, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_data_grid, GridKind};
    use crate::stats::classic_hc;

    const LN_1000: f64 = 6.907755278982137;

    #[test]
    fn rho_star_piecewise_values() {
        assert!((rho_star(0.6).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(rho_star(0.75).unwrap(), 0.25);
        // Just past the kink the other branch takes over continuously.
        let eps = 1e-9;
        assert!((rho_star(0.75 + eps).unwrap() - rho_star(0.75 - eps).unwrap()).abs() < 1e-8);
        assert!(rho_star(1.0 - 1e-12).unwrap() > 0.99999);
        for bad in [0.5, 1.0, 0.3, 1.2, f64::NAN] {
            assert!(rho_star(bad).is_err(), "rho_star({bad}) should be rejected");
        }
    }

    #[test]
    fn rho_star_strictly_increasing() {
        let mut prev = rho_star(0.5001).unwrap();
        let mut b = 0.5001 + 1e-4;
        while b < 1.0 - 1e-9 {
            let cur = rho_star(b).unwrap();
            assert!(cur > prev, "not increasing at beta={b}");
            prev = cur;
            b += 1e-4;
        }
    }

    #[test]
    fn signal_theta_matches_hand_derivation() {
        // n=1000 with 12 anomalous streams: beta = 1 - ln 12 / ln 1000.
        let beta = 1.0 - 12.0f64.ln() / LN_1000;
        let p = signal_theta(1.0, beta, 1000, 48, NullModel::NormalUnit).unwrap();
        assert!((p.beta - 0.64027291798412505743).abs() < 1e-14);
        assert!((p.theta - 0.2009323051120148831).abs() < 1e-14);
        assert_eq!(p.s, 12);
        assert!((p.r - p.tau * p.tau * (beta - 0.5)).abs() < 1e-15);
        assert_eq!(p.sigma0_sq, 1.0);

        let p = signal_theta(1.25, beta, 1000, 48, NullModel::NormalUnit).unwrap();
        assert!((p.theta - 0.25116538139001860388).abs() < 1e-14);

        // Sparser setting crosses the beta = 3/4 kink.
        let beta3 = 1.0 - 3.0f64.ln() / LN_1000;
        let p = signal_theta(1.0, beta3, 1000, 48, NullModel::NormalUnit).unwrap();
        assert!((p.beta - 0.8409595817601125209).abs() < 1e-14);
        assert!((p.theta - 0.32253938102122688636).abs() < 1e-14);
        assert_eq!(p.s, 3);

        // Exponential: theta scales by lambda0 relative to the unit-variance
        // normal value.
        let m = NullModel::Exponential { lambda0: 1.5 };
        let p = signal_theta(1.0, beta, 1000, 48, m).unwrap();
        assert!((p.theta - 0.30139845766802232465).abs() < 1e-14);
        assert!((p.sigma0_sq - 1.0 / 2.25).abs() < 1e-15);
    }

    #[test]
    fn signal_theta_null_and_generic_s() {
        let p = signal_theta(0.0, 0.7, 500, 10, NullModel::NormalUnit).unwrap();
        assert_eq!(p.theta, 0.0);
        assert_eq!(p.r, 0.0);
        // s = ceil(1000^0.4) = ceil(15.85) = 16.
        let p = signal_theta(1.0, 0.6, 1000, 10, NullModel::NormalUnit).unwrap();
        assert_eq!(p.s, 16);
        assert!(signal_theta(-0.5, 0.7, 500, 10, NullModel::NormalUnit).is_err());
        assert!(signal_theta(1.0, 0.7, 1, 10, NullModel::NormalUnit).is_err());
    }

    #[test]
    fn signal_theta_exponential_shift_cap() {
        let beta = 1.0 - 12.0f64.ln() / LN_1000;
        let m = NullModel::Exponential { lambda0: 1.5 };
        // Very short streams push the required rate reduction past lambda0.
        let err = signal_theta(1.25, beta, 1000, 3, m).unwrap_err();
        match err {
            Error::SignalOutOfRange { theta, limit } => {
                assert!((theta - 1.5069922883401116233).abs() < 1e-13);
                assert_eq!(limit, 1.5);
            }
            other => panic!("expected SignalOutOfRange, got {other:?}"),
        }
        // One more observation per stream brings it back in range.
        let p = signal_theta(1.25, beta, 1000, 4, m).unwrap();
        assert!((p.theta - 1.305093605009780361).abs() < 1e-13);
        assert!(signal_theta(1.0, beta, 1000, 4, NullModel::Exponential { lambda0: -1.0 }).is_err());
    }

    #[test]
    fn oracle_pq_normal_values() {
        assert_eq!(oracle_pq_normal(0.0, 50), 0.5);
        let p = oracle_pq_normal(1.0, 100);
        assert!((p - 1.2032597294113794e-3).abs() / p < 1e-12);
        let mut prev = 0.5;
        for k in 1..=40 {
            let cur = oracle_pq_normal(k as f64 * 0.25, 100);
            assert!(cur < prev, "not decreasing at q={}", k as f64 * 0.25);
            prev = cur;
        }
    }

    #[test]
    fn oracle_pq_gamma_values() {
        // q = 0, t = 1: survival of an exponential at its own mean.
        let e_inv = (-1.0f64).exp();
        assert!((oracle_pq_gamma(0.0, 100, 1, 1.5) - e_inv).abs() < 1e-14);
        assert!((oracle_pq_gamma(0.0, 100, 1, 7.0) - e_inv).abs() < 1e-14);
        let p = oracle_pq_gamma(0.5, 100, 2, 1.5);
        assert!((p - 0.039269680207862895739).abs() / p < 1e-12);
        // The rate cancels out of the standardized threshold.
        assert_eq!(oracle_pq_gamma(0.5, 100, 2, 1.5), oracle_pq_gamma(0.5, 100, 2, 300.0));
        for q in [0.0, 0.1, 1.0, 5.0] {
            let p = oracle_pq_gamma(q, 1000, 7, 2.0);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn oracle_pq_gamma_matches_simulation() {
        // 10^7 draws of a mean of two exponentials(1.5): Gamma(2, rate 3).
        let n = 100;
        let (t, lambda0, q) = (2, 1.5, 0.5);
        let p = oracle_pq_gamma(q, n, t, lambda0);
        let thr = 1.0 / lambda0
            + (1.0 / lambda0) * (2.0 * q * (n as f64).ln() / t as f64).sqrt();
        let gamma = Gamma::new(t as f64, 1.0 / (t as f64 * lambda0)).unwrap();
        let mut rng = replicate_rng(424242, 0);
        let reps = 10_000_000usize;
        let hits = (0..reps).filter(|_| gamma.sample(&mut rng) >= thr).count();
        let freq = hits as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "simulated {freq} vs analytic {p} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn oracle_pq_gamma_approaches_normal_for_long_streams() {
        for q in [0.25, 0.5, 1.0, 2.0] {
            let g = oracle_pq_gamma(q, 100, 10_000, 1.5);
            let n = oracle_pq_normal(q, 100);
            assert!((g - n).abs() < 1e-3, "q={q}: gamma {g} vs normal {n}");
        }
    }

    #[test]
    fn oracle_statistic_zero_when_counts_match_expectation() {
        // Grid {0}: threshold is the null mean, p_0 = 1/2, and exactly half
        // the stream means lie at or above it.
        let x = StreamMatrix::new(4, 2, vec![1.0, 1.0, 2.0, 2.0, -1.0, -1.0, -2.0, -2.0]).unwrap();
        let grid = Grid::from_points(vec![0.0], GridKind::DataDependentGrid).unwrap();
        let s = oracle_statistic(&x, NullModel::NormalUnit, &grid).unwrap();
        assert_eq!(s, 0.0);
    }

    /// Candidate exponents `q_i = t m_i² / (2 log n)` for positive stream
    /// means, nudged a hair below the exact value so the reconstructed
    /// threshold `√(2 q log(n) / t)` lands strictly below `m_i` instead of
    /// an ulp above it.
    fn candidate_grid(means: &[f64], n: usize, t: usize) -> Grid {
        let log_n = (n as f64).ln();
        let mut qs: Vec<f64> = means
            .iter()
            .filter(|&&m| m > 0.0)
            .map(|&m| (1.0 - 1e-13) * t as f64 * m * m / (2.0 * log_n))
            .collect();
        qs.sort_unstable_by(f64::total_cmp);
        qs.dedup();
        let mut points = vec![0.0];
        points.extend(qs);
        Grid::from_points(points, GridKind::DataDependentGrid).unwrap()
    }

    #[test]
    fn oracle_statistic_equals_classic_hc_at_candidates() {
        use rand::Rng;
        for instance in 0..25 {
            let mut rng = replicate_rng(909, instance);
            let n = rng.gen_range(5..=50);
            let t = rng.gen_range(2..=6);
            let values: Vec<f64> =
                (0..n * t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let x = StreamMatrix::new(n, t, values).unwrap();
            let means = stream_means(&x);
            if !means.iter().any(|&m| m > 0.0) {
                continue;
            }
            let grid = candidate_grid(&means, n, t);
            let scan = oracle_statistic(&x, NullModel::NormalUnit, &grid).unwrap();
            let pvals: Vec<f64> =
                means.iter().map(|&m| normal_sf((t as f64).sqrt() * m)).collect();
            let classic = classic_hc(&pvals).unwrap();
            assert!(
                (scan - classic).abs() <= 1e-10 * classic.abs().max(1.0),
                "instance {instance} (n={n}, t={t}): scan {scan} vs classic {classic}"
            );
        }
    }

    #[test]
    fn oracle_null_rejection_rate_is_calibrated() {
        use rand::Rng;
        let (n, t, calib, alpha) = (50, 4, 199usize, 0.05);
        let reps = 2000;
        let mut rejections = 0;
        for rep in 0..reps {
            let mut rng = replicate_rng(5150, rep as u64);
            let values: Vec<f64> =
                (0..n * t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let x = StreamMatrix::new(n, t, values).unwrap();
            let grid = build_data_grid(&x, (n as f64).ln());
            let r = oracle_hc_test(&x, NullModel::NormalUnit, &grid, calib, 7000 + rep as u64)
                .unwrap();
            if r.p_value <= alpha {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / reps as f64;
        let se = (alpha * (1.0 - alpha) / reps as f64).sqrt();
        assert!(
            (rate - alpha).abs() <= 3.0 * se,
            "null rejection rate {rate} outside {alpha} ± {}",
            3.0 * se
        );
    }

    #[test]
    fn oracle_hc_detects_planted_shift() {
        use rand::Rng;
        let (n, t) = (200, 8);
        let mut rng = replicate_rng(31337, 0);
        let mut values: Vec<f64> =
            (0..n * t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for i in 0..5 {
            for j in 0..t {
                values[i * t + j] += 2.0;
            }
        }
        let x = StreamMatrix::new(n, t, values).unwrap();
        let grid = build_data_grid(&x, (n as f64).ln());
        let r = oracle_hc_test(&x, NullModel::NormalUnit, &grid, 399, 11).unwrap();
        assert_eq!(r.p_value, 1.0 / 400.0);
        assert_eq!(r.replicates, 399);
        assert_eq!(r.method, Method::OracleHc);
    }

    #[test]
    fn oracle_hc_is_deterministic() {
        use rand::Rng;
        let mut rng = replicate_rng(64, 0);
        let values: Vec<f64> = (0..40 * 3).map(|_| rng.gen_range(0.01..5.0f64)).collect();
        let x = StreamMatrix::new(40, 3, values).unwrap();
        let grid = build_data_grid(&x, 10.0);
        let m = NullModel::Exponential { lambda0: 0.9 };
        let a = oracle_hc_test(&x, m, &grid, 250, 5).unwrap();
        let b = oracle_hc_test(&x, m, &grid, 250, 5).unwrap();
        assert!(a.same_outcome(&b));
        let c = oracle_hc_test(&x, m, &grid, 250, 6).unwrap();
        assert_eq!(a.statistic, c.statistic); // statistic ignores the seed
    }

    #[test]
    fn approx_hc_constant_matrix_reports_p_one() {
        let x = StreamMatrix::new(4, 3, vec![2.5; 12]).unwrap();
        let r = approx_hc_test(&x, &PermutationPlan::monte_carlo(30, 2), 1.0).unwrap();
        assert_eq!(r.p_value, 1.0);
        // All four stream means sit at the q = 0 threshold, where the
        // normal approximation says half should: (4 - 2) / sqrt(4 * 1/4).
        assert_eq!(r.statistic, 2.0);
        assert_eq!(r.method, Method::ApproxHc);
    }
}
