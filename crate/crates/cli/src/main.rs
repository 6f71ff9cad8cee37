//! `permhc` — permutation-calibrated higher criticism from the command
//! line.
//!
//! Four workflows:
//!
//! * `test` — run one or more anomaly tests on a CSV of data streams.
//! * `simulate` — estimate power curves over a parameter sweep, either
//!   from a JSON experiment description or a built-in preset.
//! * `monitor` — slide a test window across a day-by-stream panel with
//!   optional AR(1) prewhitening and clear-outlier exclusion.
//! * `enumerate` — exact p-values for tiny inputs by enumerating every
//!   permutation; the ground truth the Monte-Carlo engine is checked
//!   against.
//!
//! Every JSON artifact embeds the fully resolved configuration, including
//! the seed, so results can be audited and reproduced. Exit codes: 0 on
//! success, 2 for usage or input errors, 3 for internal errors.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use permhc::{
    approx_hc_test, build_data_grid, figure_preset, normalize_per_capita, oracle_hc_test,
    perm_hc_test, perm_max_test, read_population_csv, run_experiment, scan, scan_csv,
    CsvLayout, Error, ExperimentSpec, NullModel, PermutationPlan, Result, ScanMode, SeriesPanel,
    StreamMatrix, TestResult,
};

#[derive(Parser)]
#[command(
    name = "permhc",
    version,
    about = "Detect sparse anomalous data streams with permutation-calibrated higher criticism"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for permutation replicates (default: all cores).
    /// Results are identical under any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Test a matrix of data streams for a sparse set of anomalies.
    Test(TestArgs),
    /// Estimate power curves over a parameter sweep.
    Simulate(SimulateArgs),
    /// Scan a day-by-stream panel with a sliding test window.
    Monitor(MonitorArgs),
    /// Exact p-values for tiny inputs by full permutation enumeration.
    Enumerate(EnumerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    /// One row per stream, one column per observation.
    Wide,
    /// One observation per row.
    Long,
}

impl From<LayoutArg> for CsvLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Wide => CsvLayout::Wide,
            LayoutArg::Long => CsvLayout::Long,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Permutation higher criticism (sensitive to sparse anomalies).
    PermHc,
    /// Permutation max test (strongest for a single extreme stream).
    PermMax,
    /// Higher criticism with the null distribution supplied via --model.
    OracleHc,
    /// Permutation higher criticism with normal-approximation tail
    /// probabilities.
    ApproxHc,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::PermHc => "perm-hc",
            MethodArg::PermMax => "perm-max",
            MethodArg::OracleHc => "oracle-hc",
            MethodArg::ApproxHc => "approx-hc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Raw,
    Residual,
    ApproachA,
    ApproachB,
}

impl From<ModeArg> for ScanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => ScanMode::Raw,
            ModeArg::Residual => ScanMode::Residual,
            ModeArg::ApproachA => ScanMode::ApproachA,
            ModeArg::ApproachB => ScanMode::ApproachB,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Standard normal observations.
    NormalUnit,
    /// Exponential observations with rate --rate.
    Exponential,
}

#[derive(Args)]
struct TestArgs {
    /// Input CSV of observations.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = LayoutArg::Wide)]
    layout: LayoutArg,
    /// Test(s) to run; repeat the flag to run several on the same data.
    #[arg(long = "method", value_enum, action = clap::ArgAction::Append)]
    methods: Vec<MethodArg>,
    /// Permutation replicates B.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rejection threshold reported alongside each p-value.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Threshold-grid divisor d (grid spacing 1/d); defaults to log n.
    #[arg(long)]
    grid_divisor: Option<f64>,
    /// Null model for --method oracle-hc.
    #[arg(long, value_enum, default_value_t = ModelArg::NormalUnit)]
    model: ModelArg,
    /// Rate of the exponential null model.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Null simulations used to calibrate --method oracle-hc.
    #[arg(long, default_value_t = 10_000)]
    calibration_samples: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON experiment description (see the library's experiment schema).
    #[arg(long, conflicts_with = "paper_figure")]
    spec: Option<PathBuf>,
    /// Built-in experiment preset: 1a, 1b, 2a, 2b, 3a, 3b, 3c, 3d, 5a, 5b.
    #[arg(long)]
    paper_figure: Option<String>,
    /// Desk scale: divide replications by 5 (wider confidence bands,
    /// minutes instead of hours).
    #[arg(long)]
    desk: bool,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override replications per sweep point.
    #[arg(long)]
    reps: Option<usize>,
    /// Override permutation replicates B per test.
    #[arg(long)]
    permutations: Option<usize>,
    /// Override the rejection threshold.
    #[arg(long)]
    alpha: Option<f64>,
    /// Write the power-curve CSV here; the JSON manifest then goes to
    /// stdout (or --manifest).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the JSON manifest (resolved experiment + curves) here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    /// Input panel CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = LayoutArg::Wide)]
    layout: LayoutArg,
    /// Window preparation: raw, residual, approach-a, approach-b.
    #[arg(long, value_enum, default_value_t = ModeArg::Residual)]
    mode: ModeArg,
    /// Window length in days.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Permutation replicates B per window (production monitoring runs
    /// typically use 100000).
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threshold-grid divisor d; defaults to log n.
    #[arg(long)]
    grid_divisor: Option<f64>,
    /// Quantile of the permutation max-mean distribution above which a
    /// stream is excluded as a clear outlier; 1 disables exclusion.
    #[arg(long, default_value_t = 0.95)]
    exclusion_level: f64,
    /// Population CSV (stream_id,population); values are rescaled to
    /// --per population units before scanning.
    #[arg(long)]
    normalize_by: Option<PathBuf>,
    /// Population units for --normalize-by.
    #[arg(long, default_value_t = 100_000.0)]
    per: f64,
    /// Write the per-window CSV here; the JSON report then goes to stdout
    /// (or --json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the JSON report (config, fits, exclusions, p-values) here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Input CSV of observations (at most 8 values in total).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = LayoutArg::Wide)]
    layout: LayoutArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rejection threshold reported alongside each p-value.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Threshold-grid divisor d; defaults to log n.
    #[arg(long)]
    grid_divisor: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let outcome = match cli.command {
        Command::Test(args) => cmd_test(args, cli.threads),
        Command::Simulate(args) => cmd_simulate(args, cli.threads),
        Command::Monitor(args) => cmd_monitor(args, cli.threads),
        Command::Enumerate(args) => cmd_enumerate(args, cli.threads),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Internal(_) => 3,
            _ => 2,
        });
    }
}

/// Write to the path when given, otherwise to stdout.
fn emit(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| named_io(e, p))?,
        None => print!("{content}"),
    }
    Ok(())
}

/// Attach the offending path to a bare I/O error.
fn named_io(e: std::io::Error, path: &std::path::Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn with_path(e: Error, path: &std::path::Path) -> Error {
    match e {
        Error::Io(io) => named_io(io, path),
        other => other,
    }
}

/// A test result annotated with the rejection decision at the configured
/// threshold.
fn result_with_decision(result: &TestResult, alpha: f64) -> Result<serde_json::Value> {
    let mut value = serde_json::to_value(result)?;
    let reject = result.p_value <= alpha;
    value
        .as_object_mut()
        .ok_or_else(|| Error::Internal("test result did not serialize to an object".into()))?
        .insert("reject".into(), json!(reject));
    Ok(value)
}

fn null_model(model: ModelArg, rate: f64) -> NullModel {
    match model {
        ModelArg::NormalUnit => NullModel::NormalUnit,
        ModelArg::Exponential => NullModel::Exponential { lambda0: rate },
    }
}

fn cmd_test(args: TestArgs, threads: Option<usize>) -> Result<()> {
    let (x, _labels) = StreamMatrix::from_csv_path(&args.input, args.layout.into())
        .map_err(|e| with_path(e, &args.input))?;
    let d = args.grid_divisor.unwrap_or_else(|| (x.n() as f64).ln());
    let mut methods = args.methods.clone();
    if methods.is_empty() {
        methods.push(MethodArg::PermHc);
    }
    methods.dedup();
    let plan = PermutationPlan::monte_carlo(args.permutations, args.seed);
    let model = null_model(args.model, args.rate);

    let mut results = Vec::new();
    for method in &methods {
        let result = match method {
            MethodArg::PermHc => perm_hc_test(&x, &plan, d)?,
            MethodArg::PermMax => perm_max_test(&x, &plan)?,
            MethodArg::ApproxHc => approx_hc_test(&x, &plan, d)?,
            MethodArg::OracleHc => {
                let grid = build_data_grid(&x, d);
                oracle_hc_test(&x, model, &grid, args.calibration_samples, args.seed)?
            }
        };
        results.push(result_with_decision(&result, args.alpha)?);
    }

    #[derive(Serialize)]
    struct Config<'a> {
        input: String,
        layout: &'a str,
        n: usize,
        t: usize,
        methods: Vec<&'static str>,
        permutations: usize,
        seed: u64,
        alpha: f64,
        grid_divisor: f64,
        model: Option<NullModel>,
        calibration_samples: Option<usize>,
        threads: Option<usize>,
    }
    let uses_oracle = methods.contains(&MethodArg::OracleHc);
    let config = Config {
        input: args.input.display().to_string(),
        layout: if args.layout == LayoutArg::Wide { "wide" } else { "long" },
        n: x.n(),
        t: x.t(),
        methods: methods.iter().map(|m| m.name()).collect(),
        permutations: args.permutations,
        seed: args.seed,
        alpha: args.alpha,
        grid_divisor: d,
        model: uses_oracle.then_some(model),
        calibration_samples: uses_oracle.then_some(args.calibration_samples),
        threads,
    };
    let report = serde_json::to_string_pretty(&json!({
        "config": config,
        "results": results,
    }))?;
    emit(args.out.as_ref(), &report)
}

fn cmd_enumerate(args: EnumerateArgs, threads: Option<usize>) -> Result<()> {
    let (x, _labels) = StreamMatrix::from_csv_path(&args.input, args.layout.into())
        .map_err(|e| with_path(e, &args.input))?;
    let d = args.grid_divisor.unwrap_or_else(|| (x.n() as f64).ln());
    let plan = PermutationPlan::full_enumeration(args.seed);
    let results = vec![
        result_with_decision(&perm_hc_test(&x, &plan, d)?, args.alpha)?,
        result_with_decision(&perm_max_test(&x, &plan)?, args.alpha)?,
    ];

    #[derive(Serialize)]
    struct Config<'a> {
        input: String,
        layout: &'a str,
        n: usize,
        t: usize,
        seed: u64,
        alpha: f64,
        grid_divisor: f64,
        threads: Option<usize>,
    }
    let config = Config {
        input: args.input.display().to_string(),
        layout: if args.layout == LayoutArg::Wide { "wide" } else { "long" },
        n: x.n(),
        t: x.t(),
        seed: args.seed,
        alpha: args.alpha,
        grid_divisor: d,
        threads,
    };
    let report = serde_json::to_string_pretty(&json!({
        "config": config,
        "results": results,
    }))?;
    emit(args.out.as_ref(), &report)
}

fn cmd_simulate(args: SimulateArgs, _threads: Option<usize>) -> Result<()> {
    let mut spec: ExperimentSpec = match (&args.spec, &args.paper_figure) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| named_io(e, path))?;
            let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
            if args.desk {
                spec.reps = (spec.reps / 5).max(1);
            }
            spec
        }
        (None, Some(name)) => figure_preset(name, args.seed.unwrap_or(0), args.desk)?,
        _ => {
            return Err(Error::DomainError(
                "simulate needs either --spec <file> or --paper-figure <name>".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(reps) = args.reps {
        spec.reps = reps;
    }
    if let Some(b) = args.permutations {
        spec.permutations = b;
    }
    if let Some(alpha) = args.alpha {
        spec.alpha = alpha;
    }

    let result = run_experiment(&spec)?;
    let csv = result.to_csv()?;
    let manifest = result.manifest_json()?;
    match &args.out {
        Some(out) => {
            fs::write(out, &csv)?;
            emit(args.manifest.as_ref(), &manifest)?;
        }
        None => {
            print!("{csv}");
            if let Some(path) = &args.manifest {
                fs::write(path, &manifest)?;
            }
        }
    }
    Ok(())
}

fn cmd_monitor(args: MonitorArgs, threads: Option<usize>) -> Result<()> {
    let mut panel = SeriesPanel::from_csv_path(&args.input, args.layout.into())
        .map_err(|e| with_path(e, &args.input))?;
    if let Some(pop_path) = &args.normalize_by {
        let file = fs::File::open(pop_path).map_err(|e| named_io(e, pop_path))?;
        let populations: HashMap<String, f64> = read_population_csv(file)?;
        panel = normalize_per_capita(&panel, &populations, args.per)?;
    }
    let d = args.grid_divisor.unwrap_or_else(|| (panel.n() as f64).ln());
    let plan = PermutationPlan::monte_carlo(args.permutations, args.seed);
    let mode: ScanMode = args.mode.into();
    let reports = scan(&panel, args.window, mode, &plan, d, args.exclusion_level)?;
    let csv = scan_csv(&reports)?;

    #[derive(Serialize)]
    struct Config<'a> {
        input: String,
        layout: &'a str,
        mode: ScanMode,
        window: usize,
        n: usize,
        days: usize,
        permutations: usize,
        seed: u64,
        grid_divisor: f64,
        exclusion_level: f64,
        normalize_by: Option<String>,
        per: Option<f64>,
        threads: Option<usize>,
    }
    let config = Config {
        input: args.input.display().to_string(),
        layout: if args.layout == LayoutArg::Wide { "wide" } else { "long" },
        mode,
        window: args.window,
        n: panel.n(),
        days: panel.days(),
        permutations: args.permutations,
        seed: args.seed,
        grid_divisor: d,
        exclusion_level: args.exclusion_level,
        normalize_by: args.normalize_by.as_ref().map(|p| p.display().to_string()),
        per: args.normalize_by.is_some().then_some(args.per),
        threads,
    };
    let report = serde_json::to_string_pretty(&json!({
        "config": config,
        "windows": reports,
    }))?;
    match &args.out {
        Some(out) => {
            fs::write(out, &csv)?;
            emit(args.json.as_ref(), &report)?;
        }
        None => {
            print!("{csv}");
            if let Some(path) = &args.json {
                fs::write(path, &report)?;
            }
        }
    }
    Ok(())
}
