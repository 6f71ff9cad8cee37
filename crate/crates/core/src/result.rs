//! Test outcome container and its JSON wire format.

use serde::{Deserialize, Serialize};

/// Which test produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Permutation higher criticism.
    PermHc,
    /// Permutation max test.
    PermMax,
    /// Higher criticism with the exact null tail, Monte-Carlo calibrated.
    OracleHc,
    /// Higher criticism with the normal tail approximation, permutation
    /// calibrated.
    ApproxHc,
}

impl Method {
    /// The kebab-case name used on the CLI and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Method::PermHc => "perm-hc",
            Method::PermMax => "perm-max",
            Method::OracleHc => "oracle-hc",
            Method::ApproxHc => "approx-hc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one test run.
///
/// `p_value` lies in `[1/(replicates + 1), 1]` for Monte-Carlo permutation
/// calibration (add-one estimator) and in `[1/replicates, 1]` for full
/// enumeration; `statistic` is always finite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    /// Number of permutations (or null simulations) used for calibration.
    pub replicates: usize,
    pub seed: u64,
    /// Spacing of the q grid, `None` for methods without a grid.
    pub grid_spacing: Option<f64>,
    /// Wall-clock time of the test run. Not part of the determinism
    /// contract - compare results with [`TestResult::same_outcome`].
    pub elapsed_ms: u64,
}

impl TestResult {
    /// Bitwise equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &TestResult) -> bool {
        self.method == other.method
            && self.statistic.to_bits() == other.statistic.to_bits()
            && self.p_value.to_bits() == other.p_value.to_bits()
            && self.replicates == other.replicates
            && self.seed == other.seed
            && self.grid_spacing.map(f64::to_bits) == other.grid_spacing.map(f64::to_bits)
    }

    /// Pretty JSON with stable key order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("test result serializes")
    }
}
