//! The permutation engine and the two permutation-calibrated tests.
//!
//! Calibration works by shuffling all `n * t` observations jointly and
//! re-partitioning them into `n` blocks of `t`: under the null hypothesis
//! that all observations are exchangeable, the observed arrangement is one
//! uniform draw from that family, so the fraction of shuffles whose
//! statistic reaches the observed one is an exact p-value.
//!
//! Two statistics are offered: the maximum stream mean ([`perm_max_test`]),
//! and the higher-criticism scan over standardized exceedance counts
//! ([`perm_hc_test`]), whose per-threshold tail probabilities are themselves
//! estimated from the same permutation sample — see [`estimate_pq`].
//!
//! Determinism contract: given the same `(matrix, plan)`, every function
//! here returns bit-identical results regardless of how many worker threads
//! rayon uses, because replicate `b` always draws from its own counter-based
//! RNG substream and reductions are exact integer counts.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{build_data_grid, Grid};
use crate::matrix::StreamMatrix;
use crate::result::{Method, TestResult};
use crate::rng::{derive_seed, replicate_rng};
use crate::special::normal_sf;
use crate::stats::{sample_moments, stream_means, SampleMoments};

/// Cells cap for full enumeration: 8! = 40320 permutations.
pub const ENUMERATION_CAP_CELLS: usize = 8;

/// How the permutation sample is generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// `replicates` independent uniform shuffles.
    MonteCarlo,
    /// All `(n*t)!` permutations; only for tiny matrices
    /// (at most [`ENUMERATION_CAP_CELLS`] cells).
    FullEnumeration,
}

/// Seeded description of a permutation batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PermutationPlan {
    /// Number of Monte-Carlo replicates; ignored (and replaced by `(n*t)!`)
    /// under full enumeration.
    pub replicates: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl PermutationPlan {
    /// Monte-Carlo plan with `replicates` shuffles.
    pub fn monte_carlo(replicates: usize, seed: u64) -> Self {
        PermutationPlan { replicates, seed, strategy: Strategy::MonteCarlo }
    }

    /// Full-enumeration plan. The seed is recorded in results but unused,
    /// since enumeration involves no randomness.
    pub fn full_enumeration(seed: u64) -> Self {
        PermutationPlan { replicates: 0, seed, strategy: Strategy::FullEnumeration }
    }
}

/// Stream means of every permutation replicate: row `b` holds the `n` block
/// means of shuffle `b`. Under enumeration the rows cover all `(n*t)!`
/// permutations in a fixed deterministic order.
#[derive(Clone, Debug)]
pub struct PermutedMeansSample {
    means: Vec<f64>,
    n: usize,
    replicates: usize,
    plan: PermutationPlan,
}

impl PermutedMeansSample {
    /// Replicate count B (actual, after enumeration expansion).
    pub fn replicates(&self) -> usize {
        self.replicates
    }

    /// Streams per replicate.
    pub fn n(&self) -> usize {
        self.n
    }

    /// The generating plan.
    pub fn plan(&self) -> &PermutationPlan {
        &self.plan
    }

    /// Flat `B x n` row-major buffer of permuted stream means.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// The mean vector of replicate `b`.
    pub fn row(&self, b: usize) -> &[f64] {
        &self.means[b * self.n..(b + 1) * self.n]
    }

    /// Iterate over replicate rows.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.means.chunks_exact(self.n)
    }
}

/// Per-grid-point estimates of the permutation tail probability `P̂_q`.
#[derive(Clone, Debug)]
pub struct PqEstimates {
    values: Vec<f64>,
}

impl PqEstimates {
    /// Estimates aligned with the grid they were built for; nonincreasing.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Exceedance threshold for exponent `q`: `X̄ + sqrt(2 σ²_X q log(n) / t)`.
pub fn exceedance_threshold(moments: SampleMoments, q: f64, n: usize, t: usize) -> f64 {
    moments.mean + (2.0 * moments.variance * q * (n as f64).ln() / t as f64).sqrt()
}

fn thresholds_for(moments: SampleMoments, grid: &Grid, n: usize, t: usize) -> Vec<f64> {
    grid.qs().iter().map(|&q| exceedance_threshold(moments, q, n, t)).collect()
}

/// Draw the permutation sample described by `plan`.
///
/// Each replicate shuffles all `n * t` entries jointly (one uniform
/// permutation of the flattened matrix) and records the `n` means of `t`
/// consecutive slots. The shuffle operates on a sorted copy of the entries,
/// so the output depends on the matrix only through its value multiset —
/// which makes downstream estimates exactly invariant under re-arrangements
/// of the input, not just invariant in distribution.
pub fn sample_permuted_means(
    x: &StreamMatrix,
    plan: &PermutationPlan,
) -> Result<PermutedMeansSample> {
    let n = x.n();
    let t = x.t();
    let mut base = x.values().to_vec();
    base.sort_unstable_by(f64::total_cmp);
    match plan.strategy {
        Strategy::FullEnumeration => {
            let cells = n * t;
            if cells > ENUMERATION_CAP_CELLS {
                return Err(Error::PlanTooLarge { cells, cap: ENUMERATION_CAP_CELLS });
            }
            let total = (1..=cells).product::<usize>();
            let mut means = Vec::with_capacity(total * n);
            let tf = t as f64;
            for_each_permutation(&mut base, &mut |values| {
                means.extend(values.chunks_exact(t).map(|b| b.iter().sum::<f64>() / tf));
            });
            debug_assert_eq!(means.len(), total * n);
            Ok(PermutedMeansSample { means, n, replicates: total, plan: *plan })
        }
        Strategy::MonteCarlo => {
            if plan.replicates == 0 {
                return Err(Error::DomainError("need at least one replicate".into()));
            }
            let b = plan.replicates;
            let seed = plan.seed;
            let tf = t as f64;
            let mut means = vec![0.0; b * n];
            means
                .par_chunks_mut(n)
                .enumerate()
                .for_each_init(
                    || vec![0.0; n * t],
                    |scratch, (rep, out)| {
                        scratch.copy_from_slice(&base);
                        let mut rng = replicate_rng(seed, rep as u64);
                        scratch.shuffle(&mut rng);
                        for (slot, block) in out.iter_mut().zip(scratch.chunks_exact(t)) {
                            *slot = block.iter().sum::<f64>() / tf;
                        }
                    },
                );
            Ok(PermutedMeansSample { means, n, replicates: b, plan: *plan })
        }
    }
}

/// Iterative Heap's algorithm: visit every arrangement of `values` exactly
/// once (duplicated values yield repeated arrangements, deliberately — the
/// uniform distribution over permutations counts multiplicity).
fn for_each_permutation(values: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let k = values.len();
    let mut c = vec![0usize; k];
    visit(values);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                values.swap(0, i);
            } else {
                values.swap(c[i], i);
            }
            visit(values);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Estimate `P̂_q` for every grid point: the fraction, over all `B * n`
/// permuted means, of `Y_i(X^π) − X̄ >= sqrt(2 σ²_X q log(n) / t)`.
///
/// All `n` blocks of each replicate are pooled: block means are
/// exchangeable, so each has the marginal law of the first block, and
/// pooling multiplies the effective sample size by `n`.
pub fn estimate_pq(
    sample: &PermutedMeansSample,
    moments: SampleMoments,
    grid: &Grid,
    n: usize,
    t: usize,
) -> Result<PqEstimates> {
    if n != sample.n() {
        return Err(Error::DomainError(format!(
            "sample has {} streams, caller says {n}",
            sample.n()
        )));
    }
    let thresholds = thresholds_for(moments, grid, n, t);
    let mut pool = sample.means().to_vec();
    pool.sort_unstable_by(f64::total_cmp);
    let size = pool.len() as f64;
    let values = thresholds
        .iter()
        .map(|&thr| {
            let below = pool.partition_point(|&m| m < thr);
            (pool.len() - below) as f64 / size
        })
        .collect();
    Ok(PqEstimates { values })
}

/// Observed exceedance count `N̂_q`: streams whose mean clears the
/// `q`-threshold built from the pooled sample moments.
pub fn hat_n(x: &StreamMatrix, moments: SampleMoments, q: f64) -> usize {
    let thr = exceedance_threshold(moments, q, x.n(), x.t());
    stream_means(x).iter().filter(|&&m| m >= thr).count()
}

/// Standardized count with the ordering conventions used inside the scan:
/// 0/0 is 0, and a zero denominator with a nonzero numerator maps to ±∞ so
/// the maximization still orders outcomes sensibly. The public
/// [`crate::stats::standardized_count`] treats those cases as errors
/// instead; the tests below never produce them because their `P̂` pool
/// always contains the arrangement being scored.
pub(crate) fn v_hat(count: usize, n: usize, p: f64) -> f64 {
    let numerator = count as f64 - n as f64 * p;
    if p <= 0.0 || p >= 1.0 {
        if numerator == 0.0 {
            0.0
        } else if numerator > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        numerator / (n as f64 * p * (1.0 - p)).sqrt()
    }
}

/// `max_q V̂_q` for a sorted mean vector against precomputed thresholds and
/// tail estimates.
pub(crate) fn hat_t_sorted(sorted_means: &[f64], thresholds: &[f64], pq: &[f64]) -> f64 {
    let n = sorted_means.len();
    let mut best = f64::NEG_INFINITY;
    for (&thr, &p) in thresholds.iter().zip(pq) {
        let below = sorted_means.partition_point(|&m| m < thr);
        let v = v_hat(n - below, n, p);
        if v > best {
            best = v;
        }
    }
    best
}

/// The permutation higher-criticism statistic
/// `T̂ = max_q (N̂_q − n P̂_q) / sqrt(n P̂_q (1 − P̂_q))`, with 0/0 read as 0.
pub fn hat_t(x: &StreamMatrix, grid: &Grid, pq: &PqEstimates) -> f64 {
    let moments = sample_moments(x);
    let thresholds = thresholds_for(moments, grid, x.n(), x.t());
    let mut means = stream_means(x);
    means.sort_unstable_by(f64::total_cmp);
    hat_t_sorted(&means, &thresholds, pq.values())
}

/// Where the scan's per-threshold tail probabilities come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PqSource {
    /// Estimated from the permutation sample itself.
    Permutation,
    /// The normal approximation `1 − Φ(sqrt(2 q log n))`.
    NormalApprox,
}

fn validate_testable(x: &StreamMatrix) -> Result<()> {
    if x.t() < 2 {
        return Err(Error::StatisticDegenerate {
            reason: "streams of length 1 make the statistic permutation-invariant".into(),
        });
    }
    if x.n() < 2 {
        return Err(Error::StatisticDegenerate {
            reason: "a single stream is unchanged in law by joint shuffles".into(),
        });
    }
    Ok(())
}

/// Shared pipeline for the higher-criticism tests: build the data grid, draw
/// one permutation sample, obtain `P̂_q` (from the sample or the normal
/// approximation), then score the observed and every permuted arrangement
/// with the same `P̂_q` and count replicates reaching the observed statistic.
pub(crate) fn hc_permutation_test(
    x: &StreamMatrix,
    plan: &PermutationPlan,
    d: f64,
    source: PqSource,
    reuse_for_calibration: bool,
) -> Result<TestResult> {
    let start = Instant::now();
    validate_testable(x)?;
    let n = x.n();
    let grid = build_data_grid(x, d);
    let moments = sample_moments(x);
    let thresholds = thresholds_for(moments, &grid, n, x.t());

    let estimation_sample = sample_permuted_means(x, plan)?;
    // Optionally calibrate on an independent permutation batch instead of
    // reusing the estimation sample (the default reuses it; the tail
    // estimates are permutation-invariant, so reuse does not bias the test).
    let fresh_sample;
    let calibration_sample = if reuse_for_calibration {
        &estimation_sample
    } else {
        let fresh_plan = PermutationPlan {
            seed: derive_seed(plan.seed, &[1]),
            ..*plan
        };
        fresh_sample = sample_permuted_means(x, &fresh_plan)?;
        &fresh_sample
    };
    let b = calibration_sample.replicates();

    let mut observed = stream_means(x);
    observed.sort_unstable_by(f64::total_cmp);

    let pq: Vec<f64> = match source {
        PqSource::Permutation => {
            // Pool counts accumulated per replicate. Under Monte-Carlo the
            // observed arrangement joins the pool; full enumeration already
            // contains it as the identity permutation. This keeps the pool a
            // superset of every arrangement that gets scored, so no scored
            // count can see a zero tail estimate (V̂ stays finite).
            let extra = match estimation_sample.plan().strategy {
                Strategy::MonteCarlo => Some(observed.as_slice()),
                Strategy::FullEnumeration => None,
            };
            pooled_tail_fractions(&estimation_sample, &thresholds, extra)
        }
        PqSource::NormalApprox => grid
            .qs()
            .iter()
            .map(|&q| normal_sf((2.0 * q * (n as f64).ln()).sqrt()))
            .collect(),
    };

    let t_obs = hat_t_sorted(&observed, &thresholds, &pq);

    let exceed = calibration_sample
        .means()
        .par_chunks(n)
        .filter(|row| {
            let mut sorted = row.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            hat_t_sorted(&sorted, &thresholds, &pq) >= t_obs
        })
        .count();

    let p_value = match plan.strategy {
        Strategy::FullEnumeration => exceed as f64 / b as f64,
        Strategy::MonteCarlo => (1 + exceed) as f64 / (b + 1) as f64,
    };
    debug_assert!(t_obs.is_finite(), "observed statistic must be finite");
    Ok(TestResult {
        method: match source {
            PqSource::Permutation => Method::PermHc,
            PqSource::NormalApprox => Method::ApproxHc,
        },
        statistic: t_obs,
        p_value,
        replicates: b,
        seed: plan.seed,
        grid_spacing: grid.spacing(),
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Fraction of pool means at or above each threshold, where the pool is
/// every replicate row plus an optional extra mean vector.
fn pooled_tail_fractions(
    sample: &PermutedMeansSample,
    thresholds: &[f64],
    extra: Option<&[f64]>,
) -> Vec<f64> {
    let n = sample.n();
    let zero = || vec![0usize; thresholds.len()];
    let add = |mut a: Vec<usize>, b: Vec<usize>| {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
        a
    };
    let count_row = |row: &[f64]| {
        let mut sorted = row.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        thresholds
            .iter()
            .map(|&thr| sorted.len() - sorted.partition_point(|&m| m < thr))
            .collect::<Vec<usize>>()
    };
    let mut counts = sample
        .means()
        .par_chunks(n)
        .map(count_row)
        .reduce(zero, add);
    let mut pool = sample.replicates() * n;
    if let Some(row) = extra {
        counts = add(counts, count_row(row));
        pool += row.len();
    }
    counts.into_iter().map(|c| c as f64 / pool as f64).collect()
}

/// Permutation higher-criticism test.
///
/// Pipeline: data-dependent grid with spacing `1/d`; one permutation sample;
/// `P̂_q` estimated from it (tail estimates are permutation-invariant, so
/// the same sample recalibrates the statistic); p-value is the add-one
/// fraction of replicates whose statistic reaches the observed one, or the
/// exact fraction under full enumeration.
pub fn perm_hc_test(x: &StreamMatrix, plan: &PermutationPlan, d: f64) -> Result<TestResult> {
    hc_permutation_test(x, plan, d, PqSource::Permutation, true)
}

/// [`perm_hc_test`] with the sample-reuse flag exposed: when `reuse` is
/// false, calibration uses a second, independently seeded permutation batch
/// instead of the estimation sample.
pub fn perm_hc_test_with(
    x: &StreamMatrix,
    plan: &PermutationPlan,
    d: f64,
    reuse: bool,
) -> Result<TestResult> {
    hc_permutation_test(x, plan, d, PqSource::Permutation, reuse)
}

/// Permutation max test: statistic `max_i Y_i(X)`, p-value the add-one
/// fraction of shuffles whose largest block mean reaches the observed
/// maximum (exact fraction under enumeration).
pub fn perm_max_test(x: &StreamMatrix, plan: &PermutationPlan) -> Result<TestResult> {
    let start = Instant::now();
    validate_testable(x)?;
    let sample = sample_permuted_means(x, plan)?;
    let b = sample.replicates();
    let observed = stream_means(x)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let exceed = sample
        .rows()
        .filter(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= observed)
        .count();
    let p_value = match plan.strategy {
        Strategy::FullEnumeration => exceed as f64 / b as f64,
        Strategy::MonteCarlo => (1 + exceed) as f64 / (b + 1) as f64,
    };
    Ok(TestResult {
        method: Method::PermMax,
        statistic: observed,
        p_value,
        replicates: b,
        seed: plan.seed,
        grid_spacing: None,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Empirical `level`-quantile of the per-replicate maximum stream mean:
/// the smallest sample value whose empirical CDF reaches `level`.
pub fn max_quantile(sample: &PermutedMeansSample, level: f64) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::DomainError(format!("quantile level {level} outside (0, 1)")));
    }
    let mut maxima: Vec<f64> = sample
        .rows()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    maxima.sort_unstable_by(f64::total_cmp);
    let rank = (level * maxima.len() as f64).ceil().max(1.0) as usize;
    Ok(maxima[rank - 1])
}

/// Per-stream permutation p-values: `p_i = (1 + #{pool means >= Y_i}) /
/// (pool size + 1)`, pooling all `B * n` permuted means (upper tail:
/// anomalous streams have large means).
pub fn per_stream_pvalues(x: &StreamMatrix, sample: &PermutedMeansSample) -> Vec<f64> {
    let mut pool = sample.means().to_vec();
    pool.sort_unstable_by(f64::total_cmp);
    let denom = (pool.len() + 1) as f64;
    stream_means(x)
        .into_iter()
        .map(|y| {
            let at_or_above = pool.len() - pool.partition_point(|&m| m < y);
            (1 + at_or_above) as f64 / denom
        })
        .collect()
}

/// Indices of streams whose per-stream p-value clears the Bonferroni bar
/// `alpha / n`.
pub fn bonferroni_flags(pvalues: &[f64], alpha: f64) -> Vec<usize> {
    let bar = alpha / pvalues.len() as f64;
    pvalues
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| (p <= bar).then_some(i))
        .collect()
}
