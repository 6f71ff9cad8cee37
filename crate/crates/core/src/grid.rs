//! Grids of threshold exponents `q` scanned by the higher-criticism
//! maximization.

use crate::matrix::StreamMatrix;
use crate::stats::sample_moments;

/// How a grid was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    /// Fixed `{0, 1/k, ..., 1}` on the unit interval.
    TheoremGrid,
    /// Data-dependent `{0, 1/d, 2/d, ...}` extended until the top point is
    /// guaranteed to leave no exceedances.
    DataDependentGrid,
}

/// A strictly increasing list of exponents starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    qs: Vec<f64>,
    kind: GridKind,
    degenerate: bool,
}

impl Grid {
    /// Build a grid from explicit points, which must start at 0 and be
    /// strictly increasing and finite.
    pub fn from_points(qs: Vec<f64>, kind: GridKind) -> crate::error::Result<Self> {
        if qs.first() != Some(&0.0) {
            return Err(crate::error::Error::DomainError(
                "grid must start at 0".into(),
            ));
        }
        if qs.iter().any(|q| !q.is_finite()) || qs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(crate::error::Error::DomainError(
                "grid points must be finite and strictly increasing".into(),
            ));
        }
        Ok(Grid { qs, kind, degenerate: false })
    }

    /// The grid points, strictly increasing, `qs[0] = 0`.
    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.qs.len()
    }

    /// Always false: construction guarantees at least the point 0.
    pub fn is_empty(&self) -> bool {
        self.qs.is_empty()
    }

    /// Spacing between consecutive points; `None` for a single-point grid.
    pub fn spacing(&self) -> Option<f64> {
        (self.qs.len() >= 2).then(|| self.qs[1] - self.qs[0])
    }

    /// True when the data admitted no usable scale (constant matrix), in
    /// which case the grid collapsed to `{0}`. This is a warning condition,
    /// not an error: tests on such data still run and report p-value 1.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// The fixed grid `{0, 1/k, 2/k, ..., 1}` with `k + 1` points.
pub fn build_theorem_grid(k: usize) -> Grid {
    assert!(k >= 1, "theorem grid needs k >= 1");
    let kf = k as f64;
    Grid {
        qs: (0..=k).map(|j| j as f64 / kf).collect(),
        kind: GridKind::TheoremGrid,
        degenerate: false,
    }
}

/// The data-dependent grid `{0, 1/d, 2/d, ...}` whose top point is at least
/// `q_max = M² t / (2 log n)`, where `M = (max_ij x_ij − X̄)/σ_X`. Scanning
/// beyond `q_max` is pointless because no stream mean can exceed that
/// threshold, so the top point pins the exceedance count to zero.
///
/// A constant matrix has no scale (`σ_X = 0`); the grid collapses to `{0}`
/// and is flagged [`Grid::is_degenerate`].
pub fn build_data_grid(x: &StreamMatrix, d: f64) -> Grid {
    assert!(x.n() >= 2, "data-dependent grid needs n >= 2");
    assert!(d.is_finite() && d > 0.0, "grid divisor must be positive");
    let moments = sample_moments(x);
    if moments.variance == 0.0 {
        return Grid {
            qs: vec![0.0],
            kind: GridKind::DataDependentGrid,
            degenerate: true,
        };
    }
    let max = x.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = (max - moments.mean) / moments.sd();
    let q_max = m * m * (x.t() as f64) / (2.0 * (x.n() as f64).ln());
    let mut steps = (q_max * d).ceil() as usize;
    steps = steps.max(1);
    // Guard the "top point >= q_max" guarantee against rounding when
    // q_max * d lands exactly on an integer.
    if (steps as f64) / d < q_max {
        steps += 1;
    }
    Grid {
        qs: (0..=steps).map(|j| j as f64 / d).collect(),
        kind: GridKind::DataDependentGrid,
        degenerate: false,
    }
}
