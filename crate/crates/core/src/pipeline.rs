//! Sliding-window monitoring of long series panels.
//!
//! A panel holds `n` streams observed over `T` days (for example daily case
//! rates per municipality). [`scan`] slides a `t`-day window across the
//! panel and, per window, optionally prewhitens each stream with a pooled
//! AR(1) fit, removes "clear outlier" streams whose mean exceeds a
//! permutation max-quantile, and runs both the permutation higher-criticism
//! test and its normal-approximation variant on what remains.
//!
//! Four modes cover the orderings in which fitting and exclusion can be
//! combined: [`ScanMode::Raw`] (no fit), [`ScanMode::Residual`] (fit on the
//! full window, exclude by residual means, test residuals),
//! [`ScanMode::ApproachA`] (exclude on raw means first, then fit and test
//! residuals), and [`ScanMode::ApproachB`] (like `Residual` but refitting
//! on the kept streams before testing).
//!
//! Neighboring windows overlap, so their p-values are dependent; reports
//! are per-window summaries, not jointly calibrated inferences.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CsvLayout, StreamMatrix};
use crate::oracle::approx_hc_test;
use crate::permute::{
    max_quantile, per_stream_pvalues, perm_hc_test, sample_permuted_means, PermutationPlan,
};
use crate::result::TestResult;
use crate::rng::derive_seed;
use crate::stats::stream_means;

/// A rectangular panel of `n` streams over `T` days, with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPanel {
    values: Vec<f64>,
    n: usize,
    days: usize,
    stream_labels: Vec<String>,
    day_labels: Vec<String>,
}

impl SeriesPanel {
    /// Build a panel from per-stream rows. Omitted labels default to
    /// `"1"`, `"2"`, … in order.
    pub fn new(
        rows: Vec<Vec<f64>>,
        stream_labels: Option<Vec<String>>,
        day_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::DomainError("panel must be non-empty".into()));
        }
        let n = rows.len();
        let days = rows[0].len();
        let mut values = Vec::with_capacity(n * days);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != days {
                return Err(Error::DomainError(format!(
                    "stream {} has {} days, expected {days}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::DomainError(format!(
                        "non-finite value {v} at stream {}, day {}",
                        i + 1,
                        j + 1
                    )));
                }
                values.push(v);
            }
        }
        let stream_labels = match stream_labels {
            Some(l) if l.len() != n => {
                return Err(Error::DomainError(format!(
                    "{} stream labels for {n} streams",
                    l.len()
                )))
            }
            Some(l) => l,
            None => (1..=n).map(|i| i.to_string()).collect(),
        };
        let day_labels = match day_labels {
            Some(l) if l.len() != days => {
                return Err(Error::DomainError(format!(
                    "{} day labels for {days} days",
                    l.len()
                )))
            }
            Some(l) => l,
            None => (1..=days).map(|j| j.to_string()).collect(),
        };
        Ok(SeriesPanel { values, n, days, stream_labels, day_labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn stream_labels(&self) -> &[String] {
        &self.stream_labels
    }

    pub fn day_labels(&self) -> &[String] {
        &self.day_labels
    }

    /// All observations of stream `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.days..(i + 1) * self.days]
    }

    /// Wide CSV: one row per stream, first column the stream id, remaining
    /// columns the values. A header row is detected when any value cell is
    /// non-numeric or the first cell names the id column (`stream_id`,
    /// `stream`, or `id`); its remaining cells become the day labels.
    pub fn from_csv_wide(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        let mut day_labels: Option<Vec<String>> = None;
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(idx + 1, |p| p.line() as usize);
            if record.len() < 2 {
                return Err(Error::parse(line, 1, "need a stream id and at least one value"));
            }
            let first_data_row = rows.is_empty() && day_labels.is_none();
            if first_data_row && looks_like_header(&record) {
                day_labels = Some(record.iter().skip(1).map(str::to_owned).collect());
                continue;
            }
            let mut row = Vec::with_capacity(record.len() - 1);
            for (col, cell) in record.iter().enumerate().skip(1) {
                row.push(parse_cell(cell, line, col + 1)?);
            }
            labels.push(record[0].to_owned());
            rows.push(row);
        }
        SeriesPanel::new(rows, Some(labels), day_labels)
    }

    /// Long CSV with header `stream_id,date,value` (case-insensitive).
    /// Streams and days are ordered by first appearance; every stream must
    /// cover every day exactly once.
    pub fn from_csv_long(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr.headers()?;
            let names: Vec<String> =
                headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
            if names != ["stream_id", "date", "value"] {
                return Err(Error::parse(
                    1,
                    1,
                    format!("expected header stream_id,date,value, got {}", names.join(",")),
                ));
            }
        }
        let mut stream_index: HashMap<String, usize> = HashMap::new();
        let mut day_index: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut day_labels = Vec::new();
        let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(idx + 2, |p| p.line() as usize);
            if record.len() != 3 {
                return Err(Error::parse(line, 1, format!("expected 3 columns, got {}", record.len())));
            }
            let stream = record[0].to_owned();
            let day = record[1].to_owned();
            let value = parse_cell(&record[2], line, 3)?;
            let i = *stream_index.entry(stream.clone()).or_insert_with(|| {
                labels.push(stream);
                labels.len() - 1
            });
            let j = *day_index.entry(day.clone()).or_insert_with(|| {
                day_labels.push(day);
                day_labels.len() - 1
            });
            if cells.insert((i, j), value).is_some() {
                return Err(Error::parse(
                    line,
                    1,
                    format!("duplicate entry for stream {:?}, day {:?}", labels[i], day_labels[j]),
                ));
            }
        }
        let (n, days) = (labels.len(), day_labels.len());
        if n == 0 || days == 0 {
            return Err(Error::DomainError("panel must be non-empty".into()));
        }
        let mut rows = vec![vec![0.0; days]; n];
        for i in 0..n {
            for j in 0..days {
                match cells.get(&(i, j)) {
                    Some(&v) => rows[i][j] = v,
                    None => {
                        return Err(Error::DomainError(format!(
                            "stream {:?} is missing day {:?}",
                            labels[i], day_labels[j]
                        )))
                    }
                }
            }
        }
        SeriesPanel::new(rows, Some(labels), Some(day_labels))
    }

    /// Read a panel from a file in the given layout.
    pub fn from_csv_path(path: impl AsRef<Path>, layout: CsvLayout) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match layout {
            CsvLayout::Wide => SeriesPanel::from_csv_wide(file),
            CsvLayout::Long => SeriesPanel::from_csv_long(file),
        }
    }
}

fn looks_like_header(record: &csv::StringRecord) -> bool {
    let id_names = ["stream_id", "stream", "id"];
    if id_names.contains(&record[0].trim().to_ascii_lowercase().as_str()) {
        return true;
    }
    record.iter().skip(1).any(|cell| cell.trim().parse::<f64>().is_err())
}

fn parse_cell(cell: &str, line: usize, col: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, col, format!("not a number: {cell:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, col, format!("non-finite value: {cell:?}")));
    }
    Ok(v)
}

/// Rescale every stream by `per / population[stream label]` — e.g.
/// `per = 100_000` turns counts into rates per 100k.
pub fn normalize_per_capita(
    panel: &SeriesPanel,
    populations: &HashMap<String, f64>,
    per: f64,
) -> Result<SeriesPanel> {
    if !(per.is_finite() && per > 0.0) {
        return Err(Error::DomainError(format!("scale {per} must be positive")));
    }
    let mut rows = Vec::with_capacity(panel.n());
    for (i, label) in panel.stream_labels().iter().enumerate() {
        let pop = populations
            .get(label)
            .copied()
            .ok_or_else(|| Error::DomainError(format!("no population for stream {label:?}")))?;
        if !(pop.is_finite() && pop > 0.0) {
            return Err(Error::DomainError(format!(
                "population {pop} for stream {label:?} must be positive"
            )));
        }
        // One shared factor per stream, so populations equal to `per`
        // leave the values bit-identical.
        let factor = per / pop;
        rows.push(panel.row(i).iter().map(|&v| v * factor).collect());
    }
    SeriesPanel::new(
        rows,
        Some(panel.stream_labels().to_vec()),
        Some(panel.day_labels().to_vec()),
    )
}

/// Two-column CSV `stream_id,population` (header required,
/// case-insensitive).
pub fn read_population_csv(reader: impl Read) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers()?;
        let names: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
        if names != ["stream_id", "population"] {
            return Err(Error::parse(
                1,
                1,
                format!("expected header stream_id,population, got {}", names.join(",")),
            ));
        }
    }
    let mut map = HashMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(idx + 2, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::parse(line, 1, format!("expected 2 columns, got {}", record.len())));
        }
        map.insert(record[0].to_owned(), parse_cell(&record[1], line, 2)?);
    }
    Ok(map)
}

/// Pooled AR(1) fit of a window: `x_j = c + a x_{j−1} + noise` over all
/// within-window lag pairs of all streams.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1Fit {
    /// Autocorrelation estimate.
    pub a_hat: f64,
    /// Process level `c / (1 − a)`.
    pub mu_hat: f64,
    /// Number of lag pairs pooled into the fit.
    pub n_obs: usize,
    /// Set when the lag regressor had zero variance (constant window), in
    /// which case `a_hat` is defined as 0 and `mu_hat` as the pooled mean.
    pub degenerate: bool,
}

impl Ar1Fit {
    /// The fitted intercept, reconstructed from the level
    /// parametrization: `c = μ̂ (1 − â)`.
    pub fn intercept(&self) -> f64 {
        self.mu_hat * (1.0 - self.a_hat)
    }
}

/// Ordinary least squares AR(1) fit pooling the lag pairs
/// `(x_{i,j−1}, x_{i,j})` for `j ∈ {2..t}` across all streams.
///
/// Only within-window lags enter the fit — the window's first day serves as
/// regressor only — so every window, including the first, is treated
/// identically without referencing pre-window data.
pub fn fit_ar1(x: &StreamMatrix) -> Result<Ar1Fit> {
    let (n, t) = (x.n(), x.t());
    if t < 3 {
        return Err(Error::DomainError(format!(
            "AR(1) fit needs at least 3 observations per stream, got {t}"
        )));
    }
    let n_obs = n * (t - 1);
    let mut sum_z = 0.0;
    let mut sum_y = 0.0;
    for i in 0..n {
        let row = x.row(i);
        sum_z += row[..t - 1].iter().sum::<f64>();
        sum_y += row[1..].iter().sum::<f64>();
    }
    let mean_z = sum_z / n_obs as f64;
    let mean_y = sum_y / n_obs as f64;
    let mut s_zz = 0.0;
    let mut s_zy = 0.0;
    for i in 0..n {
        let row = x.row(i);
        for j in 1..t {
            let dz = row[j - 1] - mean_z;
            s_zz += dz * dz;
            s_zy += dz * (row[j] - mean_y);
        }
    }
    if s_zz == 0.0 {
        return Ok(Ar1Fit { a_hat: 0.0, mu_hat: mean_y, n_obs, degenerate: true });
    }
    let a_hat = s_zy / s_zz;
    if (1.0 - a_hat).abs() < 1e-10 {
        return Err(Error::NonStationaryFit { a_hat });
    }
    let c = mean_y - a_hat * mean_z;
    Ok(Ar1Fit { a_hat, mu_hat: c / (1.0 - a_hat), n_obs, degenerate: false })
}

/// One-step-ahead residuals `x_{i,j} − μ̂ − â (x_{i,j−1} − μ̂)` for
/// `j ∈ {2..t}`: an `n × (t−1)` matrix.
pub fn residuals(x: &StreamMatrix, fit: &Ar1Fit) -> Result<StreamMatrix> {
    let (n, t) = (x.n(), x.t());
    if t < 2 {
        return Err(Error::DomainError("residuals need at least 2 observations".into()));
    }
    let mut values = Vec::with_capacity(n * (t - 1));
    for i in 0..n {
        let row = x.row(i);
        for j in 1..t {
            values.push(row[j] - fit.mu_hat - fit.a_hat * (row[j - 1] - fit.mu_hat));
        }
    }
    StreamMatrix::new(n, t - 1, values)
}

/// Remove streams whose mean strictly exceeds the `level`-quantile of the
/// permutation maximum-stream-mean distribution; returns the kept matrix
/// and the removed stream indices.
///
/// `level = 1` disables exclusion (nothing can strictly exceed the full
/// enumeration maximum, and the Monte-Carlo analogue is a truncation, so
/// the level-1 case short-circuits to "keep everything").
pub fn exclude_clear_outliers(
    x: &StreamMatrix,
    plan: &PermutationPlan,
    level: f64,
) -> Result<(StreamMatrix, Vec<usize>)> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::DomainError(format!("exclusion level {level} outside (0, 1]")));
    }
    if level == 1.0 {
        return Ok((x.clone(), Vec::new()));
    }
    let sample = sample_permuted_means(x, plan)?;
    let bar = max_quantile(&sample, level)?;
    let excluded: Vec<usize> = stream_means(x)
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| (m > bar).then_some(i))
        .collect();
    let kept = x.without_rows(&excluded)?;
    Ok((kept, excluded))
}

/// Copy the `t`-day window starting at day `w` (1-based) out of the panel.
pub fn extract_window(panel: &SeriesPanel, w: usize, t: usize) -> Result<StreamMatrix> {
    if t == 0 || w == 0 || w + t - 1 > panel.days() {
        return Err(Error::DomainError(format!(
            "window start {w} with length {t} does not fit {} days",
            panel.days()
        )));
    }
    let mut values = Vec::with_capacity(panel.n() * t);
    for i in 0..panel.n() {
        values.extend_from_slice(&panel.row(i)[w - 1..w - 1 + t]);
    }
    StreamMatrix::new(panel.n(), t, values)
}

/// How each window is prepared before testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanMode {
    /// Exclude clear outliers on the raw window, test the raw remainder.
    Raw,
    /// Fit AR(1) on the full raw window, exclude by residual means, test
    /// the remaining residuals.
    Residual,
    /// Exclude on raw means first, fit AR(1) on the kept raw streams, test
    /// their residuals.
    ApproachA,
    /// Fit, exclude by residual means, refit on the kept raw streams, test
    /// the second fit's residuals.
    ApproachB,
}

impl ScanMode {
    pub fn name(&self) -> &'static str {
        match self {
            ScanMode::Raw => "raw",
            ScanMode::Residual => "residual",
            ScanMode::ApproachA => "approach-a",
            ScanMode::ApproachB => "approach-b",
        }
    }
}

impl std::fmt::Display for ScanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything produced for one window position.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowReport {
    /// 1-based start day of the window.
    pub w: usize,
    /// Label of the start day.
    pub start_date: String,
    pub mode: ScanMode,
    /// The AR(1) fit whose residuals were tested (`None` for raw mode and
    /// errored windows).
    pub fit: Option<Ar1Fit>,
    /// Panel indices of excluded streams.
    pub excluded: Vec<usize>,
    pub excluded_labels: Vec<String>,
    pub perm_hc: Option<TestResult>,
    pub approx_hc: Option<TestResult>,
    /// Permutation p-values of the kept streams, in panel order.
    pub per_stream_pvalues: Option<Vec<f64>>,
    /// Why this window produced no test results, if it didn't.
    pub error: Option<String>,
}

fn analyze_window(
    x: &StreamMatrix,
    mode: ScanMode,
    plan: &PermutationPlan,
    level: f64,
) -> Result<(Option<Ar1Fit>, Vec<usize>, StreamMatrix)> {
    match mode {
        ScanMode::Raw => {
            let (kept, excluded) = exclude_clear_outliers(x, plan, level)?;
            Ok((None, excluded, kept))
        }
        ScanMode::Residual => {
            let fit = fit_ar1(x)?;
            let resid = residuals(x, &fit)?;
            let (kept, excluded) = exclude_clear_outliers(&resid, plan, level)?;
            Ok((Some(fit), excluded, kept))
        }
        ScanMode::ApproachA => {
            let (kept_raw, excluded) = exclude_clear_outliers(x, plan, level)?;
            let fit = fit_ar1(&kept_raw)?;
            let resid = residuals(&kept_raw, &fit)?;
            Ok((Some(fit), excluded, resid))
        }
        ScanMode::ApproachB => {
            let first = fit_ar1(x)?;
            let resid = residuals(x, &first)?;
            let (_, excluded) = exclude_clear_outliers(&resid, plan, level)?;
            let kept_raw = x.without_rows(&excluded)?;
            let refit = fit_ar1(&kept_raw)?;
            let kept_resid = residuals(&kept_raw, &refit)?;
            Ok((Some(refit), excluded, kept_resid))
        }
    }
}

/// Slide a `t`-day window across the panel and test every position.
///
/// Window `w` derives its own permutation seed from `(plan.seed, w)`, so
/// single-window reruns reproduce scan results. Windows that cannot be
/// analyzed (for example when every stream is excluded) are reported with
/// their error instead of aborting the scan. Overlapping windows share
/// data, so neighboring p-values are dependent.
pub fn scan(
    panel: &SeriesPanel,
    t: usize,
    mode: ScanMode,
    plan: &PermutationPlan,
    d: f64,
    level: f64,
) -> Result<Vec<WindowReport>> {
    if panel.days() < t {
        return Err(Error::DomainError(format!(
            "window length {t} exceeds the panel's {} days",
            panel.days()
        )));
    }
    let min_t = if mode == ScanMode::Raw { 2 } else { 3 };
    if t < min_t {
        return Err(Error::DomainError(format!(
            "{mode} scanning needs windows of at least {min_t} days, got {t}"
        )));
    }
    let mut reports = Vec::with_capacity(panel.days() - t + 1);
    for w in 1..=panel.days() - t + 1 {
        let x = extract_window(panel, w, t)?;
        let window_plan = PermutationPlan { seed: derive_seed(plan.seed, &[w as u64]), ..*plan };
        let mut report = WindowReport {
            w,
            start_date: panel.day_labels()[w - 1].clone(),
            mode,
            fit: None,
            excluded: Vec::new(),
            excluded_labels: Vec::new(),
            perm_hc: None,
            approx_hc: None,
            per_stream_pvalues: None,
            error: None,
        };
        match analyze_window(&x, mode, &window_plan, level).and_then(|(fit, excluded, tested)| {
            let perm = perm_hc_test(&tested, &window_plan, d)?;
            let approx = approx_hc_test(&tested, &window_plan, d)?;
            let sample = sample_permuted_means(&tested, &window_plan)?;
            let pvals = per_stream_pvalues(&tested, &sample);
            Ok((fit, excluded, perm, approx, pvals))
        }) {
            Ok((fit, excluded, perm, approx, pvals)) => {
                report.fit = fit;
                report.excluded_labels = excluded
                    .iter()
                    .map(|&i| panel.stream_labels()[i].clone())
                    .collect();
                report.excluded = excluded;
                report.perm_hc = Some(perm);
                report.approx_hc = Some(approx);
                report.per_stream_pvalues = Some(pvals);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        reports.push(report);
    }
    Ok(reports)
}

/// One CSV row per window:
/// `w,start_date,mode,a_hat,mu_hat,n_excluded,p_perm_hc,p_approx_hc`.
/// Fields without a value (raw-mode fits, errored windows) are left empty.
pub fn scan_csv(reports: &[WindowReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "w",
        "start_date",
        "mode",
        "a_hat",
        "mu_hat",
        "n_excluded",
        "p_perm_hc",
        "p_approx_hc",
    ])?;
    for r in reports {
        let (a_hat, mu_hat) = r
            .fit
            .map_or((String::new(), String::new()), |f| (f.a_hat.to_string(), f.mu_hat.to_string()));
        w.write_record([
            r.w.to_string(),
            r.start_date.clone(),
            r.mode.name().to_string(),
            a_hat,
            mu_hat,
            r.excluded.len().to_string(),
            r.perm_hc.as_ref().map_or(String::new(), |t| t.p_value.to_string()),
            r.approx_hc.as_ref().map_or(String::new(), |t| t.p_value.to_string()),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Pretty JSON array of the full reports (fits, excluded labels, test
/// results, per-stream p-values).
pub fn scan_json(reports: &[WindowReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use rand::Rng;

    fn panel_1x5() -> SeriesPanel {
        SeriesPanel::new(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]], None, None).unwrap()
    }

    /// Noiseless AR(1) rows from varied starting points.
    fn ar1_panel(n: usize, t: usize, a: f64, mu: f64) -> StreamMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut x = mu + (i as f64 - n as f64 / 2.0);
                (0..t)
                    .map(|_| {
                        let cur = x;
                        x = mu + a * (x - mu);
                        cur
                    })
                    .collect()
            })
            .collect();
        StreamMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn extract_window_slices() {
        let p = panel_1x5();
        assert_eq!(extract_window(&p, 2, 3).unwrap().row(0), &[2.0, 3.0, 4.0]);
        assert_eq!(extract_window(&p, 1, 5).unwrap().row(0), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(extract_window(&p, 3, 3).unwrap().row(0), &[3.0, 4.0, 5.0]);
        assert!(extract_window(&p, 4, 3).is_err());
        assert!(extract_window(&p, 0, 3).is_err());
    }

    #[test]
    fn ar1_fit_recovers_noiseless_process() {
        for &(a, mu) in &[(0.5, 2.0), (-0.8, 1.0), (0.95, -3.5), (0.0, 0.7)] {
            let x = ar1_panel(6, 8, a, mu);
            let fit = fit_ar1(&x).unwrap();
            assert!((fit.a_hat - a).abs() < 1e-8, "a: {} vs {a}", fit.a_hat);
            assert!((fit.mu_hat - mu).abs() < 1e-8, "mu: {} vs {mu}", fit.mu_hat);
            assert_eq!(fit.n_obs, 6 * 7);
            assert!(!fit.degenerate);
            let resid = residuals(&x, &fit).unwrap();
            assert_eq!((resid.n(), resid.t()), (6, 7));
            assert!(resid.values().iter().all(|r| r.abs() < 1e-8));
        }
    }

    #[test]
    fn ar1_fit_degenerate_and_errors() {
        let c = StreamMatrix::new(3, 4, vec![2.5; 12]).unwrap();
        let fit = fit_ar1(&c).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.a_hat, 0.0);
        assert_eq!(fit.mu_hat, 2.5);

        let short = StreamMatrix::new(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(fit_ar1(&short).is_err());

        // A pure random walk (a = 1) leaves the level undefined.
        let walk = ar1_panel(5, 10, 1.0, 0.0);
        assert!(matches!(fit_ar1(&walk), Err(Error::NonStationaryFit { .. })));
    }

    #[test]
    fn ar1_fit_white_noise_slope_near_zero() {
        let mut rng = replicate_rng(88, 0);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..30).map(|_| rng.gen_range(-1.0..1.0f64)).collect())
            .collect();
        let x = StreamMatrix::from_rows(&rows).unwrap();
        let fit = fit_ar1(&x).unwrap();
        let bound = 3.0 / ((40.0 * 29.0f64).sqrt());
        assert!(fit.a_hat.abs() < bound, "a_hat {} vs bound {bound}", fit.a_hat);
        assert!((fit.intercept() - fit.mu_hat * (1.0 - fit.a_hat)).abs() == 0.0);
    }

    #[test]
    fn residuals_zero_fit_drops_first_column() {
        let x = StreamMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let fit = Ar1Fit { a_hat: 0.0, mu_hat: 0.0, n_obs: 4, degenerate: false };
        let r = residuals(&x, &fit).unwrap();
        assert_eq!(r.row(0), &[2.0, 3.0]);
        assert_eq!(r.row(1), &[5.0, 6.0]);
    }

    #[test]
    fn residual_pooled_mean_vanishes_for_ols_fit() {
        let mut rng = replicate_rng(7, 0);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for _ in 0..20 {
            let mut x = rng.gen_range(-2.0..2.0);
            let mut row = vec![x];
            for _ in 1..15 {
                x = 1.0 + 0.6 * (x - 1.0) + rng.gen_range(-0.5..0.5);
                row.push(x);
            }
            rows.push(row);
        }
        let x = StreamMatrix::from_rows(&rows).unwrap();
        let fit = fit_ar1(&x).unwrap();
        let r = residuals(&x, &fit).unwrap();
        let scale = x.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
        let pooled_mean = r.values().iter().sum::<f64>() / r.values().len() as f64;
        assert!(pooled_mean.abs() <= 1e-10 * scale, "pooled mean {pooled_mean}");
    }

    #[test]
    fn exclusion_finds_planted_outlier_and_is_order_invariant() {
        let mut rng = replicate_rng(12, 0);
        let mut rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|_| rng.gen_range(-0.5..0.5f64)).collect())
            .collect();
        for v in rows[17].iter_mut() {
            *v += 10.0;
        }
        let x = StreamMatrix::from_rows(&rows).unwrap();
        let plan = PermutationPlan::monte_carlo(500, 40);
        let (kept, excluded) = exclude_clear_outliers(&x, &plan, 0.95).unwrap();
        assert_eq!(excluded, vec![17]);
        assert_eq!(kept.n(), 49);

        rows.swap(17, 0);
        let y = StreamMatrix::from_rows(&rows).unwrap();
        let (_, excluded_b) = exclude_clear_outliers(&y, &plan, 0.95).unwrap();
        assert_eq!(excluded_b, vec![0]);
    }

    #[test]
    fn exclusion_edge_cases() {
        let c = StreamMatrix::new(4, 3, vec![1.0; 12]).unwrap();
        let plan = PermutationPlan::monte_carlo(100, 1);
        let (kept, excluded) = exclude_clear_outliers(&c, &plan, 0.95).unwrap();
        assert!(excluded.is_empty());
        assert_eq!(kept.n(), 4);

        // Level 1 disables exclusion entirely.
        let x = StreamMatrix::new(2, 2, vec![0.0, 0.0, 100.0, 100.0]).unwrap();
        let (_, excluded) = exclude_clear_outliers(&x, &plan, 1.0).unwrap();
        assert!(excluded.is_empty());
        assert!(exclude_clear_outliers(&x, &plan, 0.0).is_err());
        assert!(exclude_clear_outliers(&x, &plan, 1.5).is_err());
    }

    fn noisy_panel(n: usize, days: usize, seed: u64) -> SeriesPanel {
        let mut rng = replicate_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut x = 1.0;
                (0..days)
                    .map(|_| {
                        x = 1.0 + 0.4 * (x - 1.0) + rng.gen_range(-0.3..0.3);
                        x
                    })
                    .collect()
            })
            .collect();
        SeriesPanel::new(rows, None, None).unwrap()
    }

    #[test]
    fn scan_runs_all_modes_and_is_deterministic() {
        let panel = noisy_panel(12, 14, 3);
        let plan = PermutationPlan::monte_carlo(99, 10);
        for mode in [ScanMode::Raw, ScanMode::Residual, ScanMode::ApproachA, ScanMode::ApproachB] {
            let a = scan(&panel, 5, mode, &plan, 12.0f64.ln(), 0.95).unwrap();
            let b = scan(&panel, 5, mode, &plan, 12.0f64.ln(), 0.95).unwrap();
            assert_eq!(a.len(), 10);
            for (ra, rb) in a.iter().zip(&b) {
                assert!(ra.error.is_none(), "window {} errored: {:?}", ra.w, ra.error);
                let (pa, pb) = (ra.perm_hc.as_ref().unwrap(), rb.perm_hc.as_ref().unwrap());
                assert!(pa.same_outcome(pb));
                assert!(pa.p_value >= 1.0 / 100.0 && pa.p_value <= 1.0);
                assert!(ra.approx_hc.is_some());
                let kept = 12 - ra.excluded.len();
                assert_eq!(ra.per_stream_pvalues.as_ref().unwrap().len(), kept);
                if mode == ScanMode::Raw {
                    assert!(ra.fit.is_none());
                } else {
                    assert!(ra.fit.is_some());
                }
            }
        }
    }

    #[test]
    fn scan_raw_without_exclusion_matches_direct_tests() {
        let panel = noisy_panel(8, 9, 21);
        let plan = PermutationPlan::monte_carlo(120, 33);
        let d = 8.0f64.ln();
        let reports = scan(&panel, 4, ScanMode::Raw, &plan, d, 1.0).unwrap();
        for r in &reports {
            let x = extract_window(&panel, r.w, 4).unwrap();
            let wplan = PermutationPlan { seed: derive_seed(33, &[r.w as u64]), ..plan };
            let direct = perm_hc_test(&x, &wplan, d).unwrap();
            assert!(r.perm_hc.as_ref().unwrap().same_outcome(&direct));
        }
    }

    #[test]
    fn scan_flags_planted_outbreak_window() {
        // Quiet AR(1)-ish noise with a 4-day level shift in 5 of 20 streams
        // starting day 8.
        let mut rng = replicate_rng(99, 0);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                (0..20)
                    .map(|j| {
                        let bump = if i < 5 && (8..12).contains(&j) { 1.1 } else { 0.0 };
                        rng.gen_range(-0.5..0.5) + bump
                    })
                    .collect()
            })
            .collect();
        let panel = SeriesPanel::new(rows, None, None).unwrap();
        let plan = PermutationPlan::monte_carlo(400, 5);
        let reports = scan(&panel, 4, ScanMode::Raw, &plan, 20.0f64.ln(), 1.0).unwrap();
        let best = reports
            .iter()
            .min_by(|a, b| {
                let pa = a.perm_hc.as_ref().unwrap().p_value;
                let pb = b.perm_hc.as_ref().unwrap().p_value;
                pa.partial_cmp(&pb).unwrap()
            })
            .unwrap();
        // Windows starting on days 6..=12 overlap the planted span 9..=12
        // (1-based).
        assert!(
            (6..=12).contains(&best.w),
            "min-p window starts at {} (p = {})",
            best.w,
            best.perm_hc.as_ref().unwrap().p_value
        );
    }

    #[test]
    fn scan_records_window_errors_without_aborting() {
        // Constant panel: residual modes fit a degenerate AR(1) with zero
        // residual variance; exclusion keeps everything and the tests run
        // (p = 1). Plant one wild stream so that exclusion at a tight level
        // can never keep everything... instead, force an error by making
        // every stream identical-mean except all excluded: simplest is a
        // 2-stream panel where one stream dwarfs the other so that the
        // exclusion bar (from pooled permutations) sits below both means.
        let panel = SeriesPanel::new(
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![1000.0, 1000.0, 1000.0, 1000.0]],
            None,
            None,
        )
        .unwrap();
        let plan = PermutationPlan::monte_carlo(50, 2);
        let reports = scan(&panel, 4, ScanMode::Raw, &plan, 2.0f64.ln(), 0.5).unwrap();
        assert_eq!(reports.len(), 1);
        // Whatever happens (exclusion error or a degenerate test), the scan
        // returns a report for the window.
        let r = &reports[0];
        assert!(r.error.is_some() || r.perm_hc.is_some());
    }

    #[test]
    fn scan_is_stream_order_invariant() {
        let panel = noisy_panel(10, 12, 55);
        let mut rows: Vec<Vec<f64>> = (0..10).map(|i| panel.row(i).to_vec()).collect();
        rows.reverse();
        let labels: Vec<String> = panel.stream_labels().iter().rev().cloned().collect();
        let reversed =
            SeriesPanel::new(rows, Some(labels), Some(panel.day_labels().to_vec())).unwrap();
        let plan = PermutationPlan::monte_carlo(150, 9);
        let a = scan(&panel, 5, ScanMode::Residual, &plan, 10.0f64.ln(), 0.9).unwrap();
        let b = scan(&reversed, 5, ScanMode::Residual, &plan, 10.0f64.ln(), 0.9).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(
                ra.perm_hc.as_ref().unwrap().p_value,
                rb.perm_hc.as_ref().unwrap().p_value
            );
            let mut la = ra.excluded_labels.clone();
            let mut lb = rb.excluded_labels.clone();
            la.sort();
            lb.sort();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn wide_panel_csv_roundtrip() {
        let csv = "stream_id,mon,tue,wed\nalpha,1,2,3\nbeta,4,5,6\n";
        let p = SeriesPanel::from_csv_wide(csv.as_bytes()).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.days(), 3);
        assert_eq!(p.stream_labels(), ["alpha", "beta"]);
        assert_eq!(p.day_labels(), ["mon", "tue", "wed"]);
        assert_eq!(p.row(1), &[4.0, 5.0, 6.0]);

        // No header: numeric ids stay labels, day labels are generated.
        let p = SeriesPanel::from_csv_wide("7,1.5,2.5\n8,3.5,4.5\n".as_bytes()).unwrap();
        assert_eq!(p.stream_labels(), ["7", "8"]);
        assert_eq!(p.day_labels(), ["1", "2"]);

        let err = SeriesPanel::from_csv_wide("a,1,2\nb,1,oops\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, col: 3, .. }));
    }

    #[test]
    fn long_panel_csv_roundtrip() {
        let csv = "stream_id,date,value\n\
                   a,d1,1\na,d2,2\nb,d1,3\nb,d2,4\n";
        let p = SeriesPanel::from_csv_long(csv.as_bytes()).unwrap();
        assert_eq!((p.n(), p.days()), (2, 2));
        assert_eq!(p.row(0), &[1.0, 2.0]);
        assert_eq!(p.day_labels(), ["d1", "d2"]);

        let missing = "stream_id,date,value\na,d1,1\na,d2,2\nb,d1,3\n";
        assert!(SeriesPanel::from_csv_long(missing.as_bytes()).is_err());
        let dup = "stream_id,date,value\na,d1,1\na,d1,2\n";
        assert!(SeriesPanel::from_csv_long(dup.as_bytes()).is_err());
        let bad_header = "id,day,count\na,d1,1\n";
        assert!(SeriesPanel::from_csv_long(bad_header.as_bytes()).is_err());
    }

    #[test]
    fn per_capita_normalization() {
        let p = SeriesPanel::new(
            vec![vec![2.0, 4.0], vec![10.0, 20.0]],
            Some(vec!["a".into(), "b".into()]),
            None,
        )
        .unwrap();
        let pops: HashMap<String, f64> =
            [("a".to_string(), 1000.0), ("b".to_string(), 100_000.0)].into();
        let scaled = normalize_per_capita(&p, &pops, 100_000.0).unwrap();
        assert_eq!(scaled.row(0), &[200.0, 400.0]);
        assert_eq!(scaled.row(1), &[10.0, 20.0]);

        let missing: HashMap<String, f64> = [("a".to_string(), 1000.0)].into();
        assert!(normalize_per_capita(&p, &missing, 100_000.0).is_err());

        let pops = read_population_csv("stream_id,population\na,50\nb,200\n".as_bytes()).unwrap();
        assert_eq!(pops["a"], 50.0);
        assert_eq!(pops["b"], 200.0);
        assert!(read_population_csv("name,pop\na,50\n".as_bytes()).is_err());
    }

    #[test]
    fn scan_csv_and_json_shapes() {
        let panel = noisy_panel(6, 8, 77);
        let plan = PermutationPlan::monte_carlo(60, 4);
        let reports = scan(&panel, 4, ScanMode::Residual, &plan, 6.0f64.ln(), 0.95).unwrap();
        let csv = scan_csv(&reports).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "w,start_date,mode,a_hat,mu_hat,n_excluded,p_perm_hc,p_approx_hc"
        );
        assert_eq!(lines.count(), reports.len());
        let json = scan_json(&reports).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.as_array().unwrap().len(), reports.len());
        assert_eq!(parsed[0]["mode"], "residual");
        assert!(parsed[0]["perm_hc"]["p_value"].is_number());
    }
}
