//! Generators for the committed CSV fixtures in `tests/fixtures/`.
//!
//! The regular test asserts that the committed files are byte-identical to
//! what the generators produce, so the fixtures can never silently drift
//! from their documented construction. To rewrite them after an intentional
//! change, run the ignored test:
//!
//! ```text
//! cargo test -p permhc --test make_fixtures -- --ignored
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::Exp1;

use permhc::rng::replicate_rng;
use permhc::{gen_normal, StreamMatrix};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn matrix_csv(x: &StreamMatrix) -> String {
    let mut out = String::new();
    for i in 0..x.n() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

/// 40 standard-normal streams of length 8; the first 6 streams are shifted
/// by +3.0. Seed 123. With such a strong shift no permutation reaches the
/// observed statistic, so a Monte-Carlo test with B replicates reports the
/// minimal p-value 1/(B+1).
fn planted_normal_40x8() -> String {
    let x = gen_normal(40, 8, 6, 3.0, 123).unwrap();
    matrix_csv(&x)
}

/// An `n`-stream panel of positive, right-skewed series. Each stream is an
/// AR(1) recursion `x_j = a x_{j−1} + e_j` with Exp(1) innovations plus a
/// stream-specific baseline offset drawn uniformly from [0, offset] — mildly
/// heterogeneous levels, like per-capita case rates across regions. `bump`
/// is added on the half-open day range `span` for the streams in
/// `anomalous` (0-based).
#[allow(clippy::too_many_arguments)]
fn skewed_panel(
    n: usize,
    days: usize,
    seed: u64,
    a: f64,
    offset: f64,
    anomalous: &[usize],
    span: std::ops::Range<usize>,
    bump: f64,
) -> String {
    let mut rng = replicate_rng(seed, 0);
    let offsets: Vec<f64> = (0..n).map(|_| offset * rng.gen::<f64>()).collect();
    let width = if n >= 10 { 2 } else { 1 };
    let mut out = String::new();
    write!(out, "stream_id").unwrap();
    for j in 1..=days {
        write!(out, ",d{j:0>2}").unwrap();
    }
    writeln!(out).unwrap();
    for (i, stream_offset) in offsets.iter().enumerate() {
        write!(out, "s{:0>width$}", i + 1).unwrap();
        let mut x = 0.0;
        for j in 0..days {
            let e: f64 = rng.sample(Exp1);
            x = a * x + e;
            let v = x + stream_offset;
            let v = if anomalous.contains(&i) && span.contains(&j) { v + bump } else { v };
            write!(out, ",{v}").unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}

/// 50 streams over 60 days with a 5-day outbreak (days 31–35, bump +3.0)
/// planted in streams s03, s09, s17, s28, s35, s44. Autocorrelation 0.25,
/// baseline offsets up to 0.7, seed 2026.
fn panel_50x60_outbreak() -> String {
    skewed_panel(50, 60, 2026, 0.25, 0.7, &[2, 8, 16, 27, 34, 43], 30..35, 3.0)
}

/// 30 exchangeable streams over 40 days — independent Exp(1) draws, no
/// autocorrelation, no offsets, nothing planted. Seed 41.
fn panel_30x40_null() -> String {
    let (n, days) = (30, 40);
    let mut rng = replicate_rng(41, 0);
    let mut out = String::new();
    write!(out, "stream_id").unwrap();
    for j in 1..=days {
        write!(out, ",d{j:0>2}").unwrap();
    }
    writeln!(out).unwrap();
    for i in 0..n {
        write!(out, "s{:0>2}", i + 1).unwrap();
        for _ in 0..days {
            let e: f64 = rng.sample(Exp1);
            write!(out, ",{e}").unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}

fn generated() -> Vec<(&'static str, String)> {
    vec![
        // Hand-written tiny inputs for exact-enumeration checks: every
        // permutation of n·t ≤ 8 cells can be visited, so Monte-Carlo
        // p-values have an exact reference.
        ("tiny_2x2.csv", "0,0\n1,1\n".to_string()),
        ("tiny_2x3.csv", "0.1,0.7,0.4\n1.2,0.3,0.9\n".to_string()),
        ("tiny_2x4.csv", "0.5,1.1,0.2,0.8\n1.4,0.6,1.0,0.3\n".to_string()),
        ("const_2x3.csv", "1,1,1\n1,1,1\n".to_string()),
        ("planted_normal_40x8.csv", planted_normal_40x8()),
        ("panel_50x60_outbreak.csv", panel_50x60_outbreak()),
        ("panel_30x40_null.csv", panel_30x40_null()),
    ]
}

#[test]
fn committed_fixtures_match_their_generators() {
    for (name, content) in generated() {
        let path = fixture_dir().join(name);
        let committed = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
        assert_eq!(committed, content, "{name} differs from its generator");
    }
}

#[test]
#[ignore = "rewrites the committed fixtures"]
fn regenerate_fixtures() {
    let dir = fixture_dir();
    std::fs::create_dir_all(&dir).unwrap();
    for (name, content) in generated() {
        std::fs::write(dir.join(name), content).unwrap();
    }
}
