//! Permutation-calibrated higher criticism testing for multi-stream anomaly
//! detection.
//!
//! Given `n` data streams of `t` observations each, the tests in this crate
//! ask whether a small, unknown subset of streams is anomalous (has
//! stochastically larger observations). Calibration is by permutation of all
//! `n * t` observations jointly, which makes the tests exact under the null
//! hypothesis that all observations are exchangeable — no knowledge of the
//! null distribution is required.
//!
//! The main entry points are:
//!
//! * [`permute::perm_hc_test`] — permutation higher criticism test, powerful
//!   against sparse anomalies.
//! * [`permute::perm_max_test`] — permutation max test, a Bonferroni-style
//!   baseline, strongest for very sparse anomalies.
//! * [`oracle::oracle_hc_test`] / [`oracle::approx_hc_test`] — baselines that
//!   use knowledge of the null distribution, or a normal approximation, for
//!   benchmarking the permutation approach.
//! * [`simgen::run_experiment`] — power-curve simulation harness.
//! * [`pipeline::scan`] — sliding-window monitoring of long series panels
//!   with AR(1) prewhitening and clear-outlier exclusion.

// Reference constants in tests keep every digit of the computation that
// produced them, beyond what f64 can represent.
#![allow(clippy::excessive_precision)]

pub mod error;
pub mod grid;
pub mod matrix;
pub mod oracle;
pub mod permute;
pub mod pipeline;
pub mod result;
pub mod rng;
pub mod simgen;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{build_data_grid, build_theorem_grid, Grid, GridKind};
pub use matrix::{CsvLayout, StreamMatrix};
pub use oracle::{
    approx_hc_test, oracle_hc_test, oracle_pq_gamma, oracle_pq_normal, oracle_statistic,
    rho_star, signal_theta, NullModel, SparsityParams,
};
pub use permute::{
    bonferroni_flags, estimate_pq, hat_n, hat_t, max_quantile, per_stream_pvalues, perm_hc_test,
    perm_hc_test_with, perm_max_test, sample_permuted_means, PermutationPlan, PermutedMeansSample,
    PqEstimates, Strategy,
};
pub use pipeline::{
    exclude_clear_outliers, extract_window, fit_ar1, normalize_per_capita, read_population_csv,
    residuals, scan, scan_csv, scan_json, Ar1Fit, ScanMode, SeriesPanel, WindowReport,
};
pub use result::{Method, TestResult};
pub use simgen::{
    figure_preset, gen_exponential, gen_normal, run_experiment, wilson_interval, ExperimentResult,
    ExperimentSpec, PowerCurve, PowerPoint, SkippedPoint, Sweep,
};
pub use stats::{
    classic_hc, count_exceedances, sample_moments, standardized_count, stream_means,
    SampleMoments,
};
