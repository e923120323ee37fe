//! Command-line front end: one-shot medians and the seeded experiments.
//!
//! Exit codes: 0 on success, 2 for bad arguments, configs or I/O, 3 when a
//! computation fails numerically.

mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use robustmed::aggregate::{partition_blocks, robust_mean, AggregationPlan};
use robustmed::median::geometric_median;
use robustmed::sim::{run_experiment, ExperimentConfig, ExperimentKind, Law, MatrixKind, Shape};
use robustmed::{MedianOptions, PointSet};
use serde::Serialize;
use serde_json::Value;

pub use report::{serialize_report, to_json_bytes, Format};

/// Seed used when neither the flags nor the config file name one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "robustmed",
    version,
    about = "Geometric-median estimators and their experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Geometric median of the rows of a headerless CSV file.
    Median(MedianArgs),
    /// Median-of-means estimate of the rows of a headerless CSV file.
    Mean(MeanArgs),
    /// Monte Carlo of the boosting bound with adversarial blocks.
    Boost(BoostArgs),
    /// Robust PCA with cube outliers.
    Pca(PcaArgs),
    /// Lasso against median-Lasso under spiky noise.
    Lasso(LassoArgs),
    /// Nuclear-norm regression against its block median.
    Matreg(MatregArgs),
    /// Coverage of the mean radius and of the confidence ball.
    Coverage(CoverageArgs),
}

#[derive(Debug, Args)]
struct Output {
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to ROBUSTMED_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct Common {
    #[command(flatten)]
    output: Output,
    /// JSON config with the flat experiment schema; flags override it.
    #[arg(long, conflicts_with = "paper_defaults")]
    config: Option<PathBuf>,
    /// Start from the reference setup of each experiment.
    #[arg(long)]
    paper_defaults: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Write `<prefix>_<series>.csv` histograms.
    #[arg(long)]
    csv_prefix: Option<PathBuf>,
    /// Record wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct MedianArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relaxation factor of the step, in [1, 2].
    #[arg(long)]
    relaxation: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct MeanArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    /// Explicit block count instead of the one derived from delta.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct BoostArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated subset of far, ring, cluster.
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<Shape>)]
    shapes: Option<Vec<Shape>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long)]
    outlier_scale: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_parser = parse_enum::<Law>)]
    law: Option<Law>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct LassoArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Fixed penalty; cross-validated when absent.
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    cv_grid: Option<usize>,
    #[arg(long, value_parser = parse_enum::<Law>)]
    law: Option<Law>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct MatregArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long, value_parser = parse_enum::<Law>)]
    law: Option<Law>,
    #[arg(long, value_parser = parse_enum::<MatrixKind>)]
    design: Option<MatrixKind>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long, value_parser = parse_enum::<Law>)]
    law: Option<Law>,
    #[command(flatten)]
    common: Common,
}

/// Parse a snake_case enum name through its serde representation.
fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.chain().find_map(|c| c.downcast_ref::<robustmed::Error>()) {
        Some(inner) if !inner.is_argument_error() => 3,
        _ => 2,
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Median(a) => median(a),
        Command::Mean(a) => mean(a),
        Command::Boost(a) => {
            let common = &a.common;
            experiment(ExperimentKind::BoostMc, common, |cfg| {
                set(&mut cfg.blocks, a.k.map(Some));
                set(&mut cfg.alpha, a.alpha);
                set(&mut cfg.p, a.p);
                set(&mut cfg.repetitions, a.trials);
                set(&mut cfg.epsilon, a.epsilon);
                set(&mut cfg.tau, a.tau);
                set(&mut cfg.dim, a.dim);
                set(&mut cfg.shapes, a.shapes.clone());
            })
        }
        Command::Pca(a) => experiment(ExperimentKind::Pca, &a.common, |cfg| {
            set(&mut cfg.dim, a.dim);
            set(&mut cfg.n, a.n);
            set(&mut cfg.outliers, a.outliers);
            set(&mut cfg.outlier_scale, a.outlier_scale);
            set(&mut cfg.blocks, a.blocks.map(Some));
            set(&mut cfg.components, a.components);
            set(&mut cfg.nu, a.nu);
            set(&mut cfg.law, a.law);
        }),
        Command::Lasso(a) => experiment(ExperimentKind::Lasso, &a.common, |cfg| {
            set(&mut cfg.dim, a.dim);
            set(&mut cfg.n, a.n);
            set(&mut cfg.sparsity, a.sparsity);
            set(&mut cfg.blocks, a.blocks.map(Some));
            set(&mut cfg.penalty, a.penalty.map(Some));
            set(&mut cfg.cv_folds, a.cv_folds);
            set(&mut cfg.cv_grid, a.cv_grid);
            set(&mut cfg.law, a.law);
        }),
        Command::Matreg(a) => experiment(ExperimentKind::Matreg, &a.common, |cfg| {
            set(&mut cfg.dim, a.dim);
            set(&mut cfg.n, a.n);
            set(&mut cfg.rank, a.rank);
            set(&mut cfg.t, a.t);
            set(&mut cfg.penalty, a.penalty.map(Some));
            set(&mut cfg.outliers, a.outliers);
            set(&mut cfg.signal, a.signal);
            set(&mut cfg.law, a.law);
            set(&mut cfg.design, a.design);
        }),
        Command::Coverage(a) => experiment(ExperimentKind::MeanCoverage, &a.common, |cfg| {
            set(&mut cfg.dim, a.dim);
            set(&mut cfg.n, a.n);
            set(&mut cfg.delta, a.delta);
            set(&mut cfg.blocks, a.blocks.map(Some));
            set(&mut cfg.outliers, a.outliers);
            set(&mut cfg.law, a.law);
        }),
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

/// Defaults, then the config file, then flags.
fn load_config(
    kind: ExperimentKind,
    common: &Common,
    overrides: impl FnOnce(&mut ExperimentConfig),
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::paper_defaults(kind);
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(fields) = file else {
            bail!("config {} must be a JSON object", path.display());
        };
        let mut merged = serde_json::to_value(&cfg)?;
        for (key, value) in fields {
            merged[key] = value;
        }
        cfg = serde_json::from_value(merged).with_context(|| format!("invalid config {}", path.display()))?;
        if cfg.kind != kind {
            bail!("config {} is for {:?}, not {:?}", path.display(), cfg.kind, kind);
        }
    }
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.repetitions, common.reps);
    set(&mut cfg.bins, common.bins);
    overrides(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(kind: ExperimentKind, common: &Common, overrides: impl FnOnce(&mut ExperimentConfig)) -> Result<()> {
    let cfg = load_config(kind, common, overrides)?;
    if let Some(k) = cfg.blocks {
        if matches!(kind, ExperimentKind::Pca | ExperimentKind::MeanCoverage) && 2 * k > cfg.n + cfg.outliers {
            eprintln!("warning: k = {k} blocks exceeds n/2; the deviation bounds assume k <= n/2");
        }
    }
    let start = Instant::now();
    let mut report = with_workers(common.output.workers, || run_experiment(&cfg))??;
    if common.timing {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if let Some(prefix) = &common.csv_prefix {
        for name in report.histograms.keys() {
            let path = PathBuf::from(format!("{}_{name}.csv", prefix.display()));
            write_bytes(Some(&path), &serialize_report(&report, Format::Csv(name))?)?;
        }
    }
    write_bytes(common.output.out.as_deref(), &serialize_report(&report, Format::Json)?)
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let workers = match workers {
        Some(w) => w,
        None => match std::env::var("ROBUSTMED_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("ROBUSTMED_WORKERS = {v:?} is not a count"))?,
            Err(_) => 0,
        },
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

fn write_bytes(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            Ok(out.flush()?)
        }
    }
}

/// Headerless CSV, one point per row.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading row {} of {}", i + 1, path.display()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .with_context(|| format!("row {}, column {}: {field:?} is not a number", i + 1, j + 1))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} contains no points", path.display());
    }
    Ok(rows)
}

#[derive(Serialize)]
struct MedianOutput<'a> {
    point: &'a [f64],
    weights: &'a [f64],
    iterations: usize,
    converged: bool,
    objective: f64,
}

fn median(a: MedianArgs) -> Result<()> {
    let ps = PointSet::new(read_points(&a.points)?)?;
    let mut opts = MedianOptions::default();
    set(&mut opts.tol, a.tol);
    set(&mut opts.max_iter, a.max_iter);
    set(&mut opts.step_relaxation, a.relaxation);
    opts.validate()?;
    let result = with_workers(a.output.workers, || geometric_median(&ps, &opts))??;
    if !result.converged {
        eprintln!("warning: median solver stopped after {} iterations", result.iterations);
    }
    let bytes = to_json_bytes(&MedianOutput {
        point: &result.point,
        weights: &result.weights,
        iterations: result.iterations,
        converged: result.converged,
        objective: result.objective,
    })?;
    write_bytes(a.output.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct MeanOutput<'a> {
    point: &'a [f64],
    weights: &'a [f64],
    plan: &'a AggregationPlan,
    blocks: usize,
    block_size: usize,
    discarded: usize,
    iterations: usize,
    converged: bool,
    objective: f64,
}

fn mean(a: MeanArgs) -> Result<()> {
    let data = read_points(&a.points)?;
    let mut plan = AggregationPlan::default();
    set(&mut plan.delta, a.delta);
    set(&mut plan.alpha, a.alpha);
    set(&mut plan.p, a.p);
    plan.k = a.blocks;
    let k = plan.blocks_for(data.len())?;
    if a.blocks.is_some() && 2 * k > data.len() {
        eprintln!("warning: k = {k} blocks exceeds n/2; the deviation bounds assume k <= n/2");
    }
    let partition = partition_blocks(data.len(), k)?;
    if partition.discarded_count() > 0 {
        eprintln!("note: {} trailing points discarded", partition.discarded_count());
    }
    let opts = MedianOptions::default();
    let result = with_workers(a.output.workers, || robust_mean(&data, &plan, &opts))??;
    let bytes = to_json_bytes(&MeanOutput {
        point: &result.point,
        weights: &result.weights,
        plan: &plan,
        blocks: k,
        block_size: partition.block_size(),
        discarded: partition.discarded_count(),
        iterations: result.iterations,
        converged: result.converged,
        objective: result.objective,
    })?;
    write_bytes(a.output.out.as_deref(), &bytes)
}
