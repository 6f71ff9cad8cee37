//! Synthetic data generators and the power-study harness.
//!
//! The two models are the ones the tests are benchmarked on: standard
//! normal streams where anomalous streams get a mean shift, and exponential
//! streams where anomalous streams get a reduced rate (larger mean). The
//! shift is parametrized through [`signal_theta`] as a multiple `τ` of the
//! asymptotically minimal detectable signal, so `τ < 1` is asymptotically
//! undetectable and `τ > 1` detectable.
//!
//! [`run_experiment`] sweeps one axis (`τ`, stream length, or grid
//! divisor), runs the selected tests on freshly generated data for each
//! replication, and reports empirical power with Wilson 95% intervals.
//! Replication `r` uses the same underlying noise at every sweep point
//! (common random numbers), which makes curves directly comparable across
//! points — spacing comparisons in particular are paired.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::build_data_grid;
use crate::matrix::StreamMatrix;
use crate::oracle::{approx_hc_test, oracle_hc_test, signal_theta, NullModel};
use crate::permute::{perm_hc_test, perm_max_test, PermutationPlan};
use crate::result::Method;
use crate::rng::{derive_seed, replicate_rng};

/// 97.5% standard-normal quantile, for 95% Wilson intervals.
pub const Z_975: f64 = 1.9599639845400538886;

/// Which axis a power study sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Signal multiples at fixed stream length.
    Tau { taus: Vec<f64> },
    /// Stream lengths at a fixed signal multiple.
    StreamLength { lengths: Vec<usize>, tau: f64 },
    /// Grid divisors at a fixed signal multiple; all divisors are evaluated
    /// on identical data and permutations, so the comparison is paired.
    GridSpacing { divisors: Vec<f64>, tau: f64 },
}

/// Full description of one power study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: NullModel,
    /// Streams per data set.
    pub n: usize,
    /// Stream length (ignored by the stream-length sweep).
    pub t: usize,
    /// Number of anomalous streams planted by the generator.
    pub s: usize,
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    /// Replications per sweep point.
    pub reps: usize,
    /// Permutation replicates B per test.
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Grid divisor for non-spacing sweeps; `None` means `log n`.
    pub grid_divisor: Option<f64>,
    /// Sparsity exponent override. `None` derives `β = 1 − log s / log n`,
    /// which is only valid when it lands in (1/2, 1); small-`n` studies that
    /// keep `s` fixed set the exponent explicitly instead.
    pub beta_override: Option<f64>,
    /// Monte-Carlo calibration samples for the oracle test. Optional in
    /// serialized descriptions; only consulted when the method set includes
    /// the known-null test.
    #[serde(default = "default_oracle_calib")]
    pub oracle_calib: usize,
}

fn default_oracle_calib() -> usize {
    10_000
}

impl ExperimentSpec {
    /// A spec with the defaults used throughout the power studies:
    /// 200 replications, B = 10³ permutations, α = 0.05, oracle calibration
    /// with 10⁴ samples, grid divisor `log n`.
    pub fn new(model: NullModel, n: usize, t: usize, s: usize, sweep: Sweep) -> Self {
        ExperimentSpec {
            model,
            n,
            t,
            s,
            sweep,
            methods: vec![Method::PermHc],
            reps: 200,
            permutations: 1000,
            alpha: 0.05,
            seed: 0,
            grid_divisor: None,
            beta_override: None,
            oracle_calib: 10_000,
        }
    }
}

/// One sweep point of one method's power curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub sweep_value: f64,
    pub power: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reps: usize,
}

/// Empirical power across the sweep for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub method: Method,
    pub points: Vec<PowerPoint>,
}

impl PowerCurve {
    /// The point at a given sweep value, if that point produced a result.
    pub fn point_at(&self, sweep_value: f64) -> Option<&PowerPoint> {
        self.points.iter().find(|p| p.sweep_value == sweep_value)
    }
}

/// A sweep point that produced no result, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub sweep_value: f64,
    pub reason: String,
}

/// Everything a power study produced: the curves, the points that could not
/// be evaluated, and the resolved [`ExperimentSpec`] for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub curves: Vec<PowerCurve>,
    pub skipped: Vec<SkippedPoint>,
}

/// Wilson 95% score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_975 * Z_975;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_975 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Pin the bounds inside [0, 1] and around the point estimate: at the
    // boundaries the exact interval touches p, but cancellation in
    // center − half can leave a stray 1e-17 on the wrong side.
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

/// Generate a normal-model data set: the first `s` streams are i.i.d.
/// Normal(`mu`, 1), the remaining `n − s` are i.i.d. Normal(0, 1).
///
/// Anomalous streams are always the first `s`: every test here is invariant
/// under re-ordering the streams, so placement cannot matter (asserted by a
/// test). Implemented as a standard-normal fill plus a shift on the
/// anomalous block, so data sets at different shifts share their noise when
/// they share a seed.
pub fn gen_normal(n: usize, t: usize, s: usize, mu: f64, seed: u64) -> Result<StreamMatrix> {
    if s > n {
        return Err(Error::DomainError(format!("{s} anomalous streams out of {n}")));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::DomainError(format!("mean shift {mu} must be finite and >= 0")));
    }
    let mut rng = replicate_rng(seed, 0);
    let values = (0..n * t)
        .map(|cell| {
            let z: f64 = rng.sample(StandardNormal);
            if cell < s * t {
                z + mu
            } else {
                z
            }
        })
        .collect();
    StreamMatrix::new(n, t, values)
}

/// Generate an exponential-model data set: the first `s` streams are i.i.d.
/// Exponential(rate `lambda0 − theta`), the rest i.i.d. Exponential(rate
/// `lambda0`); anomalous streams thus have the larger mean
/// `1/(λ₀ − θ)`. Implemented as unit-exponential noise scaled per block,
/// so data sets at different shifts share their noise when they share a
/// seed (and each entry is increasing in `theta`).
pub fn gen_exponential(
    n: usize,
    t: usize,
    s: usize,
    lambda0: f64,
    theta: f64,
    seed: u64,
) -> Result<StreamMatrix> {
    if s > n {
        return Err(Error::DomainError(format!("{s} anomalous streams out of {n}")));
    }
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(Error::DomainError(format!("rate {lambda0} must be positive")));
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::DomainError(format!("rate reduction {theta} must be >= 0")));
    }
    if theta >= lambda0 {
        return Err(Error::SignalOutOfRange { theta, limit: lambda0 });
    }
    let anomalous_scale = 1.0 / (lambda0 - theta);
    let null_scale = 1.0 / lambda0;
    let mut rng = replicate_rng(seed, 0);
    let values = (0..n * t)
        .map(|cell| {
            let e: f64 = rng.sample(Exp1);
            e * if cell < s * t { anomalous_scale } else { null_scale }
        })
        .collect();
    StreamMatrix::new(n, t, values)
}

fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    if spec.reps == 0 {
        return Err(Error::DomainError("need at least one replication".into()));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::DomainError(format!("level {} outside (0, 1)", spec.alpha)));
    }
    if spec.s > spec.n {
        return Err(Error::DomainError(format!(
            "{} anomalous streams out of {}",
            spec.s, spec.n
        )));
    }
    if spec.methods.is_empty() {
        return Err(Error::DomainError("no methods selected".into()));
    }
    if spec.permutations == 0 || spec.oracle_calib == 0 {
        return Err(Error::DomainError("replicate counts must be positive".into()));
    }
    let empty = match &spec.sweep {
        Sweep::Tau { taus } => taus.is_empty(),
        Sweep::StreamLength { lengths, .. } => lengths.is_empty(),
        Sweep::GridSpacing { divisors, .. } => divisors.is_empty(),
    };
    if empty {
        return Err(Error::DomainError("sweep has no points".into()));
    }
    Ok(())
}

/// `(sweep_value, t, tau, divisor)` for each sweep point.
fn sweep_points(spec: &ExperimentSpec) -> Vec<(f64, usize, f64, Option<f64>)> {
    match &spec.sweep {
        Sweep::Tau { taus } => taus.iter().map(|&tau| (tau, spec.t, tau, None)).collect(),
        Sweep::StreamLength { lengths, tau } => {
            lengths.iter().map(|&t| (t as f64, t, *tau, None)).collect()
        }
        Sweep::GridSpacing { divisors, tau } => {
            divisors.iter().map(|&d| (d, spec.t, *tau, Some(d))).collect()
        }
    }
}

const TAG_DATA: u64 = 0;
const TAG_TEST: u64 = 1;

fn method_tag(method: Method) -> u64 {
    match method {
        Method::PermHc => 1,
        Method::PermMax => 2,
        Method::OracleHc => 3,
        Method::ApproxHc => 4,
    }
}

/// Run a power study: for every sweep point, generate `reps` data sets with
/// the shift implied by `τ`, apply each selected method, and record the
/// rejection rate at level `alpha` with its Wilson interval.
///
/// Sweep points whose signal parametrization is undefined (for example an
/// exponential shift at or past the null rate) are reported in `skipped`
/// rather than aborting the sweep. Replication `r` derives its data seed
/// from `(seed, r)` only — not the sweep point — so points share noise, and
/// each method's permutation/calibration seed from `(seed, method, r)`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    validate_spec(spec)?;
    let n = spec.n;
    let beta = spec
        .beta_override
        .unwrap_or_else(|| 1.0 - (spec.s as f64).ln() / (n as f64).ln());
    let mut curves: Vec<PowerCurve> = spec
        .methods
        .iter()
        .map(|&method| PowerCurve { method, points: Vec::new() })
        .collect();
    let mut skipped = Vec::new();

    for (sweep_value, t, tau, point_divisor) in sweep_points(spec) {
        let params = match signal_theta(tau, beta, n, t, spec.model) {
            Ok(p) => p,
            Err(e) => {
                skipped.push(SkippedPoint { sweep_value, reason: e.to_string() });
                continue;
            }
        };
        let d = point_divisor
            .or(spec.grid_divisor)
            .unwrap_or_else(|| (n as f64).ln());
        let mut rejections = vec![0usize; spec.methods.len()];
        let mut failure: Option<Error> = None;
        'reps: for rep in 0..spec.reps {
            let data_seed = derive_seed(spec.seed, &[TAG_DATA, rep as u64]);
            let x = match spec.model {
                NullModel::NormalUnit => gen_normal(n, t, spec.s, params.theta, data_seed),
                NullModel::Exponential { lambda0 } => {
                    gen_exponential(n, t, spec.s, lambda0, params.theta, data_seed)
                }
            }?;
            for (slot, &method) in spec.methods.iter().enumerate() {
                let test_seed = derive_seed(spec.seed, &[TAG_TEST, method_tag(method), rep as u64]);
                let plan = PermutationPlan::monte_carlo(spec.permutations, test_seed);
                let outcome = match method {
                    Method::PermHc => perm_hc_test(&x, &plan, d),
                    Method::PermMax => perm_max_test(&x, &plan),
                    Method::ApproxHc => approx_hc_test(&x, &plan, d),
                    Method::OracleHc => {
                        let grid = build_data_grid(&x, d);
                        oracle_hc_test(&x, spec.model, &grid, spec.oracle_calib, test_seed)
                    }
                };
                match outcome {
                    Ok(r) if r.p_value <= spec.alpha => rejections[slot] += 1,
                    Ok(_) => {}
                    Err(e) => {
                        failure = Some(e);
                        break 'reps;
                    }
                }
            }
        }
        if let Some(e) = failure {
            skipped.push(SkippedPoint { sweep_value, reason: e.to_string() });
            continue;
        }
        for (slot, curve) in curves.iter_mut().enumerate() {
            let (ci_lo, ci_hi) = wilson_interval(rejections[slot], spec.reps);
            curve.points.push(PowerPoint {
                sweep_value,
                power: rejections[slot] as f64 / spec.reps as f64,
                ci_lo,
                ci_hi,
                reps: spec.reps,
            });
        }
    }
    Ok(ExperimentResult { spec: spec.clone(), curves, skipped })
}

impl ExperimentResult {
    /// Tidy CSV of every curve point:
    /// `sweep_value,method,power,ci_lo,ci_hi,reps`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sweep_value", "method", "power", "ci_lo", "ci_hi", "reps"])?;
        for curve in &self.curves {
            for p in &curve.points {
                w.write_record([
                    p.sweep_value.to_string(),
                    curve.method.name().to_string(),
                    p.power.to_string(),
                    p.ci_lo.to_string(),
                    p.ci_hi.to_string(),
                    p.reps.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Pretty JSON manifest with the full spec, curves, and skipped points.
    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Named preset power studies (`1a`, `1b`, `2a`, `2b`, `3a`–`3d`, `5a`,
/// `5b`). The family covers grid-spacing comparisons (1), stream-length
/// robustness (2), oracle comparisons at two sparsity levels (3), and
/// the permutation-versus-normal-approximation comparison on short
/// exponential streams (5). `desk` divides the replication count by 5 for
/// a quick run.
pub fn figure_preset(name: &str, seed: u64, desk: bool) -> Result<ExperimentSpec> {
    const EXP: NullModel = NullModel::Exponential { lambda0: 1.5 };
    // Moderately sparse exponent matching s = 12 of n = 1000; the
    // small-n studies (5a/5b) keep this exponent while holding s = 12.
    const BETA_MODERATE: f64 = 0.640272917984125;
    let taus: Vec<f64> = (0..=10).map(|k| k as f64 * 0.25).collect();
    let ln1000 = 1000.0f64.ln();
    let mut spec = match name {
        "1a" | "1b" => {
            let model = if name == "1a" { NullModel::NormalUnit } else { EXP };
            let sweep = Sweep::GridSpacing {
                divisors: vec![ln1000, 2.0 * ln1000, 4.0 * ln1000, 8.0 * ln1000],
                tau: 1.0,
            };
            ExperimentSpec::new(model, 1000, 48, 12, sweep)
        }
        "2a" | "2b" => {
            let (model, tau) =
                if name == "2a" { (NullModel::NormalUnit, 1.5) } else { (EXP, 1.25) };
            let sweep = Sweep::StreamLength { lengths: vec![4, 6, 8, 12, 24, 48], tau };
            let mut s = ExperimentSpec::new(model, 1000, 48, 12, sweep);
            s.methods = vec![Method::PermHc, Method::OracleHc];
            s
        }
        "3a" | "3b" | "3c" | "3d" => {
            let model = if name == "3a" || name == "3c" { NullModel::NormalUnit } else { EXP };
            let s = if name == "3a" || name == "3b" { 12 } else { 3 };
            let mut spec =
                ExperimentSpec::new(model, 1000, 48, s, Sweep::Tau { taus: taus.clone() });
            spec.methods = vec![Method::PermHc, Method::OracleHc];
            spec
        }
        "5a" | "5b" => {
            let t = if name == "5a" { 4 } else { 6 };
            let mut spec = ExperimentSpec::new(EXP, 100, t, 12, Sweep::Tau { taus });
            spec.methods = vec![Method::PermHc, Method::ApproxHc];
            spec.beta_override = Some(BETA_MODERATE);
            spec
        }
        other => {
            return Err(Error::DomainError(format!(
                "unknown figure preset {other:?} (expected 1a, 1b, 2a, 2b, 3a-3d, 5a, 5b)"
            )))
        }
    };
    spec.reps = 1000;
    spec.seed = seed;
    if desk {
        spec.reps /= 5;
    }
    Ok(spec)
}
