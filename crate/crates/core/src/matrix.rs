//! The rectangular data container every test consumes, plus CSV ingestion.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// `n` streams of `t` observations each, stored row-major: row `i` holds
/// stream `i`. Every entry is finite; the shape is immutable after
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamMatrix {
    n: usize,
    t: usize,
    values: Vec<f64>,
}

impl StreamMatrix {
    /// Build from a flat row-major buffer of length `n * t`.
    pub fn new(n: usize, t: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::DomainError(format!(
                "matrix shape {n}x{t} must have n >= 1 and t >= 1"
            )));
        }
        if values.len() != n * t {
            return Err(Error::DomainError(format!(
                "expected {} values for a {n}x{t} matrix, got {}",
                n * t,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DomainError(format!(
                "non-finite value {} at stream {}, time {}",
                values[pos],
                pos / t + 1,
                pos % t + 1
            )));
        }
        Ok(StreamMatrix { n, t, values })
    }

    /// Build from per-stream rows, which must all have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::DomainError("matrix needs at least one stream".into()));
        }
        let t = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::DomainError(format!(
                    "stream {} has {} observations, expected {t}",
                    i + 1,
                    row.len()
                )));
            }
        }
        let values = rows.iter().flatten().copied().collect();
        StreamMatrix::new(n, t, values)
    }

    /// Number of streams.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Observations per stream.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Flat row-major view of all `n * t` entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry of stream `i` at time `j` (0-based).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.t + j]
    }

    /// One stream as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.t..(i + 1) * self.t]
    }

    /// Iterate over streams.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.t)
    }

    /// A copy with the given streams removed (used by outlier exclusion).
    pub fn without_rows(&self, drop: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        let mut kept = 0;
        for i in 0..self.n {
            if !drop.contains(&i) {
                values.extend_from_slice(self.row(i));
                kept += 1;
            }
        }
        if kept == 0 {
            return Err(Error::EverythingAnomalous);
        }
        StreamMatrix::new(kept, self.t, values)
    }

    /// Read the wide layout: one CSV row per stream, one column per time
    /// point. A header row is detected automatically (any row whose fields
    /// do not all parse as finite numbers is treated as the header, but only
    /// in the first position).
    pub fn from_csv_wide<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width: Option<usize> = None;
        for (idx, record) in csv.records().enumerate() {
            let record = record.map_err(|e| csv_error(&e))?;
            let line = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(idx + 1);
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, (usize, String)> = record
                .iter()
                .enumerate()
                .map(|(c, field)| parse_value(field).map_err(|m| (c + 1, m)))
                .collect();
            match parsed {
                Ok(row) => {
                    if let Some(w) = width {
                        if row.len() != w {
                            return Err(Error::parse(
                                line,
                                row.len().min(w) + 1,
                                format!("expected {w} columns, found {}", row.len()),
                            ));
                        }
                    } else {
                        width = Some(row.len());
                    }
                    rows.push(row);
                }
                Err((col, message)) => {
                    // Non-numeric first row doubles as an optional header.
                    if idx == 0 {
                        continue;
                    }
                    return Err(Error::parse(line, col, message));
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::parse(1, 1, "no data rows".to_string()));
        }
        StreamMatrix::from_rows(&rows)
    }

    /// Read the long layout with header `stream_id,time_index,value`.
    /// Streams are ordered by first appearance; time indices per stream must
    /// cover a consecutive integer range (0- or 1-based) with no duplicates.
    /// Returns the matrix along with stream labels.
    pub fn from_csv_long<R: Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        {
            let headers = csv.headers().map_err(|e| csv_error(&e))?;
            let expect = ["stream_id", "time_index", "value"];
            let got: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
            if got != expect {
                return Err(Error::parse(
                    1,
                    1,
                    format!("long layout needs header stream_id,time_index,value, found {got:?}"),
                ));
            }
        }
        let mut labels: Vec<String> = Vec::new();
        let mut series: Vec<Vec<(i64, f64)>> = Vec::new();
        for record in csv.records() {
            let record = record.map_err(|e| csv_error(&e))?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != 3 {
                return Err(Error::parse(line, record.len(), "expected 3 columns"));
            }
            let id = record[0].to_string();
            let time: i64 = record[1]
                .parse()
                .map_err(|_| Error::parse(line, 2, format!("bad time index {:?}", &record[1])))?;
            let value = parse_value(&record[2]).map_err(|m| Error::parse(line, 3, m))?;
            let slot = match labels.iter().position(|l| *l == id) {
                Some(s) => s,
                None => {
                    labels.push(id);
                    series.push(Vec::new());
                    labels.len() - 1
                }
            };
            series[slot].push((time, value));
        }
        if series.is_empty() {
            return Err(Error::parse(1, 1, "no data rows".to_string()));
        }
        let t = series[0].len();
        let mut rows = Vec::with_capacity(series.len());
        for (slot, mut points) in series.into_iter().enumerate() {
            if points.len() != t {
                return Err(Error::DomainError(format!(
                    "stream {:?} has {} observations, expected {t}",
                    labels[slot],
                    points.len()
                )));
            }
            points.sort_by_key(|&(time, _)| time);
            let base = points[0].0;
            if base != 0 && base != 1 {
                return Err(Error::DomainError(format!(
                    "stream {:?}: time indices must start at 0 or 1, found {base}",
                    labels[slot]
                )));
            }
            for (k, &(time, _)) in points.iter().enumerate() {
                if time != base + k as i64 {
                    return Err(Error::DomainError(format!(
                        "stream {:?}: time indices must be consecutive, missing {}",
                        labels[slot],
                        base + k as i64
                    )));
                }
            }
            rows.push(points.into_iter().map(|(_, v)| v).collect());
        }
        Ok((StreamMatrix::from_rows(&rows)?, labels))
    }

    /// Convenience file-path front end for both layouts.
    pub fn from_csv_path(path: &Path, layout: CsvLayout) -> Result<(Self, Option<Vec<String>>)> {
        let file = std::fs::File::open(path)?;
        match layout {
            CsvLayout::Wide => Ok((StreamMatrix::from_csv_wide(file)?, None)),
            CsvLayout::Long => {
                let (m, labels) = StreamMatrix::from_csv_long(file)?;
                Ok((m, Some(labels)))
            }
        }
    }
}

/// Input CSV layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvLayout {
    /// Row per stream, column per time point.
    Wide,
    /// Columns `stream_id,time_index,value`.
    Long,
}

fn parse_value(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("not a number: {field:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value: {field:?}"));
    }
    Ok(v)
}

fn csv_error(e: &csv::Error) -> Error {
    let (row, col) = match e.position() {
        Some(p) => (p.line() as usize, 1),
        None => (0, 0),
    };
    Error::parse(row, col, e.to_string())
}
