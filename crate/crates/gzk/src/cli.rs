//! Command-line entry point: dataset ingestion, experiment orchestration,
//! and report emission.
//!
//! Exit codes: 0 on success, 1 on verification failure (for example an
//! achieved spectral error above `--max-eps`) or an internal error, 2 on
//! usage errors including malformed inputs. Every subcommand is
//! deterministic for a fixed `--seed`; the only environment variable
//! consulted anywhere is `GZK_THREADS`.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde_json::json;

use crate::data::{generate, ingest_csv, Dataset, IngestOptions, Preprocessing, Synthetic};
use crate::error::{Error, Result};
use crate::features::build_features;
use crate::kernel::{select_truncation, GzkModel, TruncationFamily};
use crate::learning::{
    approx_error_study, exact_krr, kernel_kmeans, kmeans_objective_exact, krr_fit,
    krr_predict, StudyKernel,
};
use crate::spectral::{
    achieved_epsilon, frobenius_error, gram, gram_truncated, projection_cost_gap,
    projection_lambda, statistical_dimension, KernelMatrix, Provenance, SpectralReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "gzk",
    version,
    about = "Random features for zonal kernel expansions on the sphere"
)]
struct Cli {
    /// Optional key=value config file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate worst-case truncation errors of Taylor and Gegenbauer
    /// expansions on [-1, 1].
    ExpandError(ExpandErrorArgs),
    /// Build a random feature matrix and write it to disk.
    BuildFeatures(BuildFeaturesArgs),
    /// Compare the feature Gram matrix against the kernel matrix spectrally.
    VerifySpectral(VerifySpectralArgs),
    /// Compare rank-r projection costs between features and kernel.
    VerifyProjection(VerifyProjectionArgs),
    /// Kernel ridge regression with random features.
    Krr(KrrArgs),
    /// Kernel k-means on feature columns.
    Kmeans(KmeansArgs),
    /// Measure feature-generation throughput.
    Bench(BenchArgs),
}

/// Run the CLI against the process arguments and return the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point: parse `args` (including the program name) and run.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Ingestion { .. } => EXIT_USAGE,
                _ => EXIT_VERIFY_FAILED,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let ctx = Ctx::load(cli.config.as_deref())?;
    match cli.command {
        Command::ExpandError(a) => cmd_expand_error(&ctx, a),
        Command::BuildFeatures(a) => cmd_build_features(&ctx, a),
        Command::VerifySpectral(a) => cmd_verify_spectral(&ctx, a),
        Command::VerifyProjection(a) => cmd_verify_projection(&ctx, a),
        Command::Krr(a) => cmd_krr(&ctx, a),
        Command::Kmeans(a) => cmd_kmeans(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
    }
}

/// Values read from the optional config file; a flag that was not passed on
/// the command line falls back to the entry with the flag's name.
struct Ctx {
    map: HashMap<String, String>,
}

impl Ctx {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "config line {}: expected key=value, got '{raw}'",
                        idx + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Ctx { map })
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Config(format!("config key '{key}': invalid value '{raw}' ({e})"))
            }),
        }
    }
}

fn pick<T>(flag: Option<T>, ctx: &Ctx, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => ctx.get(key),
    }
}

fn pick_or<T>(flag: Option<T>, ctx: &Ctx, key: &str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    Ok(pick(flag, ctx, key)?.unwrap_or(default))
}

fn require<T>(flag: Option<T>, ctx: &Ctx, key: &str) -> Result<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    pick(flag, ctx, key)?
        .ok_or_else(|| Error::Config(format!("missing required option --{key}")))
}

fn pick_flag(flag: bool, ctx: &Ctx, key: &str) -> Result<bool> {
    if flag {
        Ok(true)
    } else {
        Ok(ctx.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Write `text` to `path`, or to stdout when no path is given.
fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serializing report: {e}")))?;
    text.push('\n');
    Ok(text)
}

// ---------------------------------------------------------------------------
// shared argument groups

#[derive(Args, Clone, Debug, Default)]
struct DataArgs {
    /// CSV input file: rows are coordinates, columns are points.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Treat the first CSV line as a header row.
    #[arg(long)]
    header: bool,
    /// Zero-based coordinate row holding labels.
    #[arg(long, value_name = "ROW")]
    label_row: Option<usize>,
    /// Input transformation: none | unit-norm | standardize | scale:GAMMA.
    #[arg(long, value_name = "KIND")]
    preprocess: Option<Preprocessing>,
    /// Generate data instead of reading a file:
    /// blobs | sphere-uniform | smooth-regression.
    #[arg(long, value_name = "KIND")]
    synthetic: Option<Synthetic>,
    /// Point count for --synthetic.
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Ambient dimension for --synthetic.
    #[arg(long, value_name = "D")]
    d: Option<usize>,
    /// Seed for --synthetic draws; defaults to --seed.
    #[arg(long, value_name = "SEED")]
    data_seed: Option<u64>,
}

impl DataArgs {
    fn load(&self, ctx: &Ctx, default_seed: u64) -> Result<Dataset> {
        let input = pick(self.input.clone(), ctx, "input")?;
        let synthetic = pick(self.synthetic, ctx, "synthetic")?;
        let preprocessing = pick(self.preprocess, ctx, "preprocess")?;
        match (input, synthetic) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give either --input or --synthetic, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "no dataset: pass --input PATH or --synthetic KIND".into(),
            )),
            (Some(path), None) => {
                let options = IngestOptions {
                    has_header: pick_flag(self.header, ctx, "header")?,
                    label_row: pick(self.label_row, ctx, "label-row")?,
                    preprocessing,
                };
                ingest_csv(&path, &options)
            }
            (None, Some(kind)) => {
                let d = require(self.d, ctx, "d")?;
                let n = require(self.n, ctx, "n")?;
                let seed = pick(self.data_seed, ctx, "data-seed")?.unwrap_or(default_seed);
                let mut ds = generate(kind, d, n, seed)?;
                if let Some(p) = preprocessing {
                    p.apply(&mut ds.x)?;
                    ds.preprocessing = p;
                }
                Ok(ds)
            }
        }
    }
}

/// Kernel family selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
enum KernelChoice {
    Gaussian,
    Exponential(f64),
    Polynomial(u32),
    Ntk,
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelChoice::Gaussian),
            "ntk" => Ok(KernelChoice::Ntk),
            other => {
                if let Some(g) = other.strip_prefix("exponential:") {
                    let gamma: f64 = g.parse().map_err(|_| {
                        Error::Config(format!("invalid exponential rate '{g}'"))
                    })?;
                    Ok(KernelChoice::Exponential(gamma))
                } else if let Some(p) = other.strip_prefix("polynomial:") {
                    let degree: u32 = p.parse().map_err(|_| {
                        Error::Config(format!("invalid polynomial degree '{p}'"))
                    })?;
                    Ok(KernelChoice::Polynomial(degree))
                } else {
                    Err(Error::Config(format!(
                        "unknown kernel '{other}' (expected gaussian, \
                         exponential:GAMMA, polynomial:DEGREE, or ntk)"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Gaussian => write!(f, "gaussian"),
            KernelChoice::Exponential(g) => write!(f, "exponential:{g}"),
            KernelChoice::Polynomial(p) => write!(f, "polynomial:{p}"),
            KernelChoice::Ntk => write!(f, "ntk"),
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
struct ModelArgs {
    /// Kernel model: gaussian | exponential:GAMMA | polynomial:DEGREE | ntk.
    #[arg(long, value_name = "KIND")]
    kernel: Option<KernelChoice>,
    /// Angular truncation degree (pair with --s; exclusive with --auto-r).
    #[arg(long)]
    q: Option<usize>,
    /// Radial truncation order (pair with --q; ntk fixes s = 1).
    #[arg(long)]
    s: Option<usize>,
    /// Choose (q, s) automatically for data within this radius.
    #[arg(long, value_name = "R")]
    auto_r: Option<f64>,
    /// Accuracy target for --auto-r; the pointwise truncation budget is
    /// eps * lambda / (10 n).
    #[arg(long, value_name = "EPS")]
    auto_eps: Option<f64>,
}

impl ModelArgs {
    /// Resolve kernel and truncation flags into a model for a `d x n`
    /// dataset. Exactly one of explicit `--q`/`--s` or `--auto-r` must be
    /// present; automatic selection needs `lambda`.
    fn build(&self, ctx: &Ctx, d: usize, n: usize, lambda: Option<f64>) -> Result<GzkModel> {
        let kind = pick_or(self.kernel, ctx, "kernel", KernelChoice::Gaussian)?;
        let q = pick(self.q, ctx, "q")?;
        let s = pick(self.s, ctx, "s")?;
        let auto_r = pick(self.auto_r, ctx, "auto-r")?;
        let auto_eps = pick(self.auto_eps, ctx, "auto-eps")?;
        let (q, s) = match (q, auto_r) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "pass either explicit --q/--s or --auto-r, not both".into(),
                ));
            }
            (None, None) => {
                return Err(Error::Config(
                    "truncation unspecified: pass --q with --s, or --auto-r R".into(),
                ));
            }
            (Some(q), None) => {
                let s = match (kind, s) {
                    (KernelChoice::Ntk, None) => 1,
                    (KernelChoice::Ntk, Some(1)) => 1,
                    (KernelChoice::Ntk, Some(other)) => {
                        return Err(Error::Config(format!(
                            "the ntk kernel fixes s = 1, got --s {other}"
                        )));
                    }
                    (_, Some(s)) => s,
                    (_, None) => {
                        return Err(Error::Config(
                            "explicit truncation needs both --q and --s".into(),
                        ));
                    }
                };
                (q, s)
            }
            (None, Some(r)) => {
                let eps = auto_eps.unwrap_or(0.1);
                let lambda = lambda.ok_or_else(|| {
                    Error::Config("--auto-r needs --lambda for the error budget".into())
                })?;
                let family = match kind {
                    KernelChoice::Gaussian => TruncationFamily::Gaussian,
                    KernelChoice::Exponential(g) => TruncationFamily::DotProduct {
                        c_kappa: 1.0,
                        beta_kappa: g,
                    },
                    KernelChoice::Polynomial(p) => TruncationFamily::DotProduct {
                        c_kappa: 1.0,
                        beta_kappa: f64::from(p).max(1.0),
                    },
                    KernelChoice::Ntk => {
                        return Err(Error::Config(
                            "automatic truncation needs a growth bound; pass --q \
                             for the ntk kernel"
                        .into()));
                    }
                };
                select_truncation(family, r, d, n, eps, lambda)?
            }
        };
        match kind {
            KernelChoice::Gaussian => GzkModel::gaussian(d, q, s),
            KernelChoice::Exponential(g) => GzkModel::exponential(d, q, s, g),
            KernelChoice::Polynomial(p) => GzkModel::polynomial(d, q, s, p),
            KernelChoice::Ntk => GzkModel::two_layer_relu(d, q),
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
struct RunArgs {
    /// Number of sphere samples.
    #[arg(long)]
    m: Option<usize>,
    /// RNG seed for the sphere directions (and synthetic data by default).
    #[arg(long)]
    seed: Option<u64>,
    /// Ridge regularization parameter.
    #[arg(long)]
    lambda: Option<f64>,
}

impl RunArgs {
    fn m(&self, ctx: &Ctx) -> Result<usize> {
        require(self.m, ctx, "m")
    }

    fn m_or(&self, ctx: &Ctx, default: usize) -> Result<usize> {
        pick_or(self.m, ctx, "m", default)
    }

    fn seed(&self, ctx: &Ctx) -> Result<u64> {
        pick_or(self.seed, ctx, "seed", 0)
    }

    fn lambda_opt(&self, ctx: &Ctx) -> Result<Option<f64>> {
        pick(self.lambda, ctx, "lambda")
    }

    fn lambda(&self, ctx: &Ctx) -> Result<f64> {
        require(self.lambda, ctx, "lambda")
    }
}

// ---------------------------------------------------------------------------
// expand-error

#[derive(Args, Debug)]
struct ExpandErrorArgs {
    /// Test function: exp2 (e^{2t}) | ntk (two-layer ReLU angular function).
    #[arg(long, value_name = "KIND")]
    kernel: Option<String>,
    /// Comma-separated expansion dimensions for the Gegenbauer rows.
    #[arg(long, value_name = "LIST")]
    dims: Option<String>,
    /// Largest truncation degree to tabulate.
    #[arg(long, value_name = "DEG")]
    max_degree: Option<usize>,
    /// Write the CSV table here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn parse_study_kernel(name: &str) -> Result<StudyKernel> {
    match name {
        "exp2" => Ok(StudyKernel::Exp2),
        "ntk" => Ok(StudyKernel::NtkAngular),
        other => Err(Error::Config(format!(
            "unknown study kernel '{other}' (expected exp2 or ntk)"
        ))),
    }
}

fn parse_dims(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid dimension '{p}' in --dims")))
        })
        .collect()
}

fn cmd_expand_error(ctx: &Ctx, a: ExpandErrorArgs) -> Result<i32> {
    let kernel = parse_study_kernel(&pick_or(a.kernel, ctx, "kernel", "exp2".into())?)?;
    let dims = parse_dims(&pick_or(a.dims, ctx, "dims", "2,4,8,32".into())?)?;
    let max_degree = pick_or(a.max_degree, ctx, "max-degree", 15)?;
    let rows = approx_error_study(kernel, &dims, max_degree)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "d", "degree", "max_error"])?;
    for row in &rows {
        w.write_record([
            row.method.clone(),
            row.d.map(|d| d.to_string()).unwrap_or_default(),
            row.degree.to_string(),
            format!("{}", row.max_error),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("flushing CSV: {e}")))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Format(format!("CSV not UTF-8: {e}")))?;
    let output = pick(a.output, ctx, "output")?;
    write_output(output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// build-features

#[derive(Args, Debug)]
struct BuildFeaturesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Binary output path for the feature matrix.
    #[arg(long, value_name = "PATH")]
    features_out: Option<PathBuf>,
    /// Also dump the features as CSV (header row = point indices).
    #[arg(long, value_name = "PATH")]
    csv_out: Option<PathBuf>,
}

fn cmd_build_features(ctx: &Ctx, a: BuildFeaturesArgs) -> Result<i32> {
    let seed = a.run.seed(ctx)?;
    let m = a.run.m(ctx)?;
    let lambda = a.run.lambda_opt(ctx)?;
    let ds = a.data.load(ctx, seed)?;
    let model = a.model.build(ctx, ds.d(), ds.n(), lambda)?;
    let z = build_features(ds.x.view(), &model, m, seed)?;
    let features_out = require(a.features_out, ctx, "features-out")?;
    z.save_binary(&features_out)?;
    if let Some(csv_path) = pick(a.csv_out, ctx, "csv-out")? {
        let mut f = File::create(&csv_path)?;
        z.write_csv(&mut f)?;
    }
    println!(
        "wrote {} x {} feature blocks for {} points (q = {}, s = {}, seed = {seed}) to {}",
        m,
        model.s(),
        ds.n(),
        model.q(),
        model.s(),
        features_out.display()
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// verify-spectral / verify-projection

#[derive(Args, Debug)]
struct VerifySpectralArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Exit 1 when the achieved spectral error exceeds this threshold.
    #[arg(long, value_name = "EPS")]
    max_eps: Option<f64>,
    /// Projection rank reported alongside the spectral numbers.
    #[arg(long, value_name = "R")]
    rank: Option<usize>,
    /// Random projection frames tried per rank.
    #[arg(long, value_name = "T")]
    trials: Option<usize>,
    /// Compare against the exact reference kernel instead of the truncated
    /// expansion.
    #[arg(long)]
    exact: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

/// Assemble the kernel matrix the features are supposed to approximate:
/// the truncated expansion by default, the exact reference kernel on demand.
fn kernel_matrix(model: &GzkModel, x: ArrayView2<'_, f64>, exact: bool) -> Result<KernelMatrix> {
    if exact {
        gram(x, |a, b| model.kernel_exact(a, b), Provenance::Exact)
    } else {
        gram_truncated(model, x)
    }
}

fn cmd_verify_spectral(ctx: &Ctx, a: VerifySpectralArgs) -> Result<i32> {
    let seed = a.run.seed(ctx)?;
    let m = a.run.m(ctx)?;
    let lambda = a.run.lambda(ctx)?;
    let ds = a.data.load(ctx, seed)?;
    if ds.n() < 2 {
        return Err(Error::Config("spectral verification needs n >= 2".into()));
    }
    let model = a.model.build(ctx, ds.d(), ds.n(), Some(lambda))?;
    let exact = pick_flag(a.exact, ctx, "exact")?;
    let k = kernel_matrix(&model, ds.x.view(), exact)?;
    let z = build_features(ds.x.view(), &model, m, seed)?;
    let g = KernelMatrix::empirical(z.gram())?;

    let rank = pick_or(a.rank, ctx, "rank", 10.min(ds.n() - 1))?;
    let trials = pick_or(a.trials, ctx, "trials", 5)?;
    let report = SpectralReport {
        achieved_eps: achieved_epsilon(&k, &g, lambda)?,
        stat_dim: statistical_dimension(&k, lambda)?,
        frob_err: frobenius_error(&k, &g)?,
        proj_cost_gap: projection_cost_gap(&k, &g, rank, trials, seed)?,
        lambda,
        rank,
        n: ds.n(),
        m,
        seed,
    };
    let output = pick(a.output, ctx, "output")?;
    write_output(output.as_deref(), &to_json(&report)?)?;
    let max_eps = pick(a.max_eps, ctx, "max-eps")?;
    Ok(match max_eps {
        Some(t) if report.achieved_eps > t => EXIT_VERIFY_FAILED,
        _ => EXIT_OK,
    })
}

#[derive(Args, Debug)]
struct VerifyProjectionArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Projection rank r under test.
    #[arg(long, value_name = "R")]
    rank: Option<usize>,
    /// Random projection frames tried in addition to the eigenframes.
    #[arg(long, value_name = "T")]
    trials: Option<usize>,
    /// Exit 1 when the relative projection-cost gap exceeds this threshold.
    #[arg(long, value_name = "GAP")]
    max_gap: Option<f64>,
    /// Compare against the exact reference kernel instead of the truncated
    /// expansion.
    #[arg(long)]
    exact: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn cmd_verify_projection(ctx: &Ctx, a: VerifyProjectionArgs) -> Result<i32> {
    let seed = a.run.seed(ctx)?;
    let m = a.run.m(ctx)?;
    let ds = a.data.load(ctx, seed)?;
    if ds.n() < 2 {
        return Err(Error::Config("projection verification needs n >= 2".into()));
    }
    let rank = pick_or(a.rank, ctx, "rank", 10.min(ds.n() - 1))?;
    let trials = pick_or(a.trials, ctx, "trials", 10)?;
    // lambda defaults to the tail average of the kernel spectrum beyond the
    // tested rank, so it may only be resolved after the kernel is built
    let lambda_flag = a.run.lambda_opt(ctx)?;
    let model = a.model.build(ctx, ds.d(), ds.n(), lambda_flag)?;
    let exact = pick_flag(a.exact, ctx, "exact")?;
    let k = kernel_matrix(&model, ds.x.view(), exact)?;
    let lambda = match lambda_flag {
        Some(l) => l,
        None => {
            let tail = projection_lambda(&k, rank)?;
            if tail <= 0.0 {
                return Err(Error::Config(format!(
                    "spectrum tail beyond rank {rank} is zero; pass --lambda \
                     explicitly"
                )));
            }
            tail
        }
    };
    let z = build_features(ds.x.view(), &model, m, seed)?;
    let g = KernelMatrix::empirical(z.gram())?;
    let report = SpectralReport {
        achieved_eps: achieved_epsilon(&k, &g, lambda)?,
        stat_dim: statistical_dimension(&k, lambda)?,
        frob_err: frobenius_error(&k, &g)?,
        proj_cost_gap: projection_cost_gap(&k, &g, rank, trials, seed)?,
        lambda,
        rank,
        n: ds.n(),
        m,
        seed,
    };
    let output = pick(a.output, ctx, "output")?;
    write_output(output.as_deref(), &to_json(&report)?)?;
    let max_gap = pick(a.max_gap, ctx, "max-gap")?;
    Ok(match max_gap {
        Some(t) if report.proj_cost_gap > t => EXIT_VERIFY_FAILED,
        _ => EXIT_OK,
    })
}

// ---------------------------------------------------------------------------
// krr

#[derive(Args, Debug)]
struct KrrArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Fraction of points (taken from the front) used for training.
    #[arg(long, value_name = "F")]
    train_fraction: Option<f64>,
    /// CSV of test-point predictions (index,prediction).
    #[arg(long, value_name = "PATH")]
    predictions_out: Option<PathBuf>,
    /// Also fit exact kernel ridge regression and report the relative gap.
    #[arg(long)]
    exact: bool,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn mse(pred: ArrayView1<'_, f64>, truth: ArrayView1<'_, f64>) -> f64 {
    pred.iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len().max(1) as f64
}

fn cmd_krr(ctx: &Ctx, a: KrrArgs) -> Result<i32> {
    let seed = a.run.seed(ctx)?;
    let m = a.run.m(ctx)?;
    let lambda = a.run.lambda(ctx)?;
    let ds = a.data.load(ctx, seed)?;
    let y = ds.y.clone().ok_or_else(|| {
        Error::Config(
            "ridge regression needs labels: pass --label-row or a labeled \
             synthetic dataset"
                .into(),
        )
    })?;
    let n = ds.n();
    let fraction = pick_or(a.train_fraction, ctx, "train-fraction", 0.8)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "--train-fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n);
    let n_test = n - n_train;
    let model = a.model.build(ctx, ds.d(), n_train, Some(lambda))?;

    let x_train = ds.x.slice(s![.., ..n_train]);
    let y_train = y.slice(s![..n_train]);
    let z_train = build_features(x_train, &model, m, seed)?;
    let fit = krr_fit(&z_train, y_train, lambda)?;
    let train_pred = krr_predict(&fit, &z_train)?;
    let train_mse = mse(train_pred.view(), y_train);

    let mut test_mse = None;
    let mut exact_test_mse = None;
    let mut relative_gap = None;
    let mut predictions = Array1::<f64>::zeros(0);
    if n_test > 0 {
        let x_test = ds.x.slice(s![.., n_train..]);
        let y_test = y.slice(s![n_train..]);
        let z_test = build_features(x_test, &model, m, seed)?;
        predictions = krr_predict(&fit, &z_test)?;
        let feature_mse = mse(predictions.view(), y_test);
        test_mse = Some(feature_mse);

        if pick_flag(a.exact, ctx, "exact")? {
            let k_train = gram(x_train, |u, v| model.kernel_exact(u, v), Provenance::Exact)?;
            let mut k_cross = Array2::<f64>::zeros((n_test, n_train));
            for i in 0..n_test {
                for j in 0..n_train {
                    k_cross[(i, j)] =
                        model.kernel_exact(x_test.column(i), x_train.column(j))?;
                }
            }
            let exact_pred = exact_krr(k_train.data(), y_train, lambda, k_cross.view())?;
            let exact_mse = mse(exact_pred.view(), y_test);
            exact_test_mse = Some(exact_mse);
            if exact_mse > 0.0 {
                relative_gap = Some((feature_mse - exact_mse).abs() / exact_mse);
            }
        }
    }

    if let Some(path) = pick(a.predictions_out, ctx, "predictions-out")? {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["index", "prediction"])?;
        for (offset, p) in predictions.iter().enumerate() {
            w.write_record([(n_train + offset).to_string(), format!("{p}")])?;
        }
        w.flush()?;
    }

    let summary = json!({
        "n_train": n_train,
        "n_test": n_test,
        "m": m,
        "lambda": lambda,
        "seed": seed,
        "train_mse": train_mse,
        "test_mse": test_mse,
        "exact_test_mse": exact_test_mse,
        "relative_gap": relative_gap,
    });
    let output = pick(a.output, ctx, "output")?;
    write_output(output.as_deref(), &to_json(&summary)?)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// kmeans

#[derive(Args, Debug)]
struct KmeansArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    /// Lloyd iteration cap.
    #[arg(long, value_name = "ITERS")]
    max_iters: Option<usize>,
    /// CSV of cluster assignments (index,cluster).
    #[arg(long, value_name = "PATH")]
    assignments_out: Option<PathBuf>,
    /// Also evaluate the clustering objective under the exact kernel.
    #[arg(long)]
    exact: bool,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

/// Fraction of points whose cluster id matches binary ground truth, up to
/// swapping the two labels.
fn binary_agreement(truth: &Array1<f64>, assignments: &[usize]) -> Option<f64> {
    if !truth.iter().all(|&v| v == 0.0 || v == 1.0) {
        return None;
    }
    let n = truth.len();
    let same = truth
        .iter()
        .zip(assignments)
        .filter(|(t, a)| **t as usize == **a)
        .count();
    Some(same.max(n - same) as f64 / n as f64)
}

fn cmd_kmeans(ctx: &Ctx, a: KmeansArgs) -> Result<i32> {
    let seed = a.run.seed(ctx)?;
    let m = a.run.m(ctx)?;
    let lambda = a.run.lambda_opt(ctx)?;
    let ds = a.data.load(ctx, seed)?;
    let model = a.model.build(ctx, ds.d(), ds.n(), lambda)?;
    let k = pick_or(a.k, ctx, "k", 2)?;
    let max_iters = pick_or(a.max_iters, ctx, "max-iters", 100)?;
    let z = build_features(ds.x.view(), &model, m, seed)?;
    let clustering = kernel_kmeans(&z, k, seed, max_iters)?;

    let mut exact_objective = None;
    if pick_flag(a.exact, ctx, "exact")? {
        let km = kernel_matrix(&model, ds.x.view(), true)?;
        exact_objective = Some(kmeans_objective_exact(&km, &clustering.assignments, k)?);
    }
    let label_agreement = match (&ds.y, k) {
        (Some(y), 2) => binary_agreement(y, &clustering.assignments),
        _ => None,
    };

    if let Some(path) = pick(a.assignments_out, ctx, "assignments-out")? {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["index", "cluster"])?;
        for (j, c) in clustering.assignments.iter().enumerate() {
            w.write_record([j.to_string(), c.to_string()])?;
        }
        w.flush()?;
    }

    let summary = json!({
        "k": k,
        "m": m,
        "seed": seed,
        "n": ds.n(),
        "objective": clustering.objective,
        "exact_objective": exact_objective,
        "label_agreement": label_agreement,
    });
    let output = pick(a.output, ctx, "output")?;
    write_output(output.as_deref(), &to_json(&summary)?)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// bench

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Number of sphere-uniform points to generate.
    #[arg(long)]
    n: Option<usize>,
    /// Ambient dimension of the generated points.
    #[arg(long)]
    d: Option<usize>,
    /// Timed repetitions.
    #[arg(long)]
    repeats: Option<usize>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn cmd_bench(ctx: &Ctx, a: BenchArgs) -> Result<i32> {
    let seed = a.run.seed(ctx)?;
    let m = a.run.m_or(ctx, 1024)?;
    let lambda = a.run.lambda_opt(ctx)?;
    let n = pick_or(a.n, ctx, "n", 1000)?;
    let d = pick_or(a.d, ctx, "d", 3)?;
    let repeats = pick_or(a.repeats, ctx, "repeats", 3)?.max(1);
    let ds = generate(Synthetic::SphereUniform, d, n, seed)?;
    let model = a.model.build(ctx, d, n, lambda)?;

    let mut seconds = Vec::with_capacity(repeats);
    let mut fingerprint = 0u64;
    for _ in 0..repeats {
        let start = Instant::now();
        let z = build_features(ds.x.view(), &model, m, seed)?;
        seconds.push(start.elapsed().as_secs_f64());
        fingerprint = z.fingerprint();
    }
    let entries = (m * model.s() * n) as f64;
    let best = seconds.iter().cloned().fold(f64::INFINITY, f64::min);
    // wall-clock numbers are measurements, not artifacts: they go to stderr
    // so the JSON below stays bit-identical across runs with the same seed
    for (i, sec) in seconds.iter().enumerate() {
        eprintln!(
            "run {}: {sec:.3} s, {:.3e} feature entries/s",
            i + 1,
            entries / sec
        );
    }
    eprintln!("best: {best:.3} s");
    let summary = json!({
        "m": m,
        "s": model.s(),
        "q": model.q(),
        "d": d,
        "n": n,
        "seed": seed,
        "repeats": repeats,
        "feature_entries": entries,
        "model_fingerprint": format!("{fingerprint:016x}"),
    });
    let output = pick(a.output, ctx, "output")?;
    write_output(output.as_deref(), &to_json(&summary)?)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;

    fn args(list: &[&str]) -> Vec<String> {
        std::iter::once("gzk")
            .chain(list.iter().copied())
            .map(String::from)
            .collect()
    }

    #[test]
    fn kernel_choice_parsing() {
        assert_eq!(
            "gaussian".parse::<KernelChoice>().unwrap(),
            KernelChoice::Gaussian
        );
        assert_eq!(
            "exponential:1.5".parse::<KernelChoice>().unwrap(),
            KernelChoice::Exponential(1.5)
        );
        assert_eq!(
            "polynomial:3".parse::<KernelChoice>().unwrap(),
            KernelChoice::Polynomial(3)
        );
        assert_eq!("ntk".parse::<KernelChoice>().unwrap(), KernelChoice::Ntk);
        assert!("laplacian".parse::<KernelChoice>().is_err());
        assert!("exponential:x".parse::<KernelChoice>().is_err());
    }

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("2,4, 8").unwrap(), vec![2, 4, 8]);
        assert!(parse_dims("2,,4").is_err());
        assert!(parse_dims("two").is_err());
    }

    #[test]
    fn config_file_fallback_and_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# comment\nm = 32\nkernel=exponential:2\n\n").unwrap();
        let ctx = Ctx::load(Some(&path)).unwrap();
        // fallback
        assert_eq!(pick(None::<usize>, &ctx, "m").unwrap(), Some(32));
        assert_eq!(
            pick(None::<KernelChoice>, &ctx, "kernel").unwrap(),
            Some(KernelChoice::Exponential(2.0))
        );
        // flag wins
        assert_eq!(pick(Some(64usize), &ctx, "m").unwrap(), Some(64));
        // absent everywhere
        assert_eq!(pick(None::<f64>, &ctx, "lambda").unwrap(), None);
        // malformed value
        fs::write(&path, "m = not-a-number\n").unwrap();
        let ctx = Ctx::load(Some(&path)).unwrap();
        assert!(pick(None::<usize>, &ctx, "m").is_err());
        // malformed line
        fs::write(&path, "just words\n").unwrap();
        assert!(Ctx::load(Some(&path)).is_err());
    }

    #[test]
    fn model_args_truncation_rules() {
        let ctx = Ctx::load(None).unwrap();
        let explicit = ModelArgs {
            q: Some(4),
            s: Some(2),
            ..Default::default()
        };
        let model = explicit.build(&ctx, 3, 50, None).unwrap();
        assert_eq!((model.q(), model.s()), (4, 2));

        let both = ModelArgs {
            q: Some(4),
            s: Some(2),
            auto_r: Some(1.0),
            ..Default::default()
        };
        assert!(both.build(&ctx, 3, 50, Some(0.01)).is_err());

        let neither = ModelArgs::default();
        assert!(neither.build(&ctx, 3, 50, None).is_err());

        let auto = ModelArgs {
            auto_r: Some(1.0),
            ..Default::default()
        };
        assert!(auto.build(&ctx, 3, 100, None).is_err()); // lambda missing
        let model = auto.build(&ctx, 3, 100, Some(0.01)).unwrap();
        assert_eq!((model.q(), model.s()), (16, 6));

        let ntk_s2 = ModelArgs {
            kernel: Some(KernelChoice::Ntk),
            q: Some(6),
            s: Some(2),
            ..Default::default()
        };
        assert!(ntk_s2.build(&ctx, 3, 50, None).is_err());
        let ntk = ModelArgs {
            kernel: Some(KernelChoice::Ntk),
            q: Some(6),
            ..Default::default()
        };
        assert_eq!(ntk.build(&ctx, 3, 50, None).unwrap().s(), 1);
    }

    #[test]
    fn expand_error_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("table.csv");
        let code = run_from(args(&[
            "expand-error",
            "--kernel",
            "exp2",
            "--dims",
            "2,3",
            "--max-degree",
            "4",
            "--output",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "method,d,degree,max_error");
        // 5 taylor rows + 2 * 5 gegenbauer rows
        assert_eq!(lines.count(), 15);
        assert!(text.contains("taylor,,0,"));
        assert!(text.contains("gegenbauer,2,4,"));
    }

    #[test]
    fn build_features_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("z.gzkf");
        // m = 0 is a usage error
        let code = run_from(args(&[
            "build-features",
            "--synthetic",
            "sphere-uniform",
            "--n",
            "10",
            "--d",
            "3",
            "--q",
            "4",
            "--s",
            "2",
            "--m",
            "0",
            "--features-out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_USAGE);
        // unknown flag is a usage error (clap)
        let code = run_from(args(&["build-features", "--definitely-not-a-flag"]));
        assert_eq!(code, EXIT_USAGE);
        // missing dataset
        let code = run_from(args(&[
            "build-features",
            "--q",
            "4",
            "--s",
            "2",
            "--m",
            "8",
            "--features-out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn build_features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("z.gzkf");
        let code = run_from(args(&[
            "build-features",
            "--synthetic",
            "sphere-uniform",
            "--n",
            "12",
            "--d",
            "3",
            "--q",
            "4",
            "--s",
            "2",
            "--m",
            "16",
            "--seed",
            "9",
            "--features-out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        let z = FeatureMatrix::load_binary(&out).unwrap();
        assert_eq!(z.n(), 12);
        assert_eq!(z.data().nrows(), 16 * 2);
        let ds = generate(Synthetic::SphereUniform, 3, 12, 9).unwrap();
        let model = GzkModel::gaussian(3, 4, 2).unwrap();
        let direct = build_features(ds.x.view(), &model, 16, 9).unwrap();
        assert_eq!(direct.data(), z.data());
    }

    #[test]
    fn verify_spectral_exit_codes_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report.json");
        let base = [
            "verify-spectral",
            "--synthetic",
            "sphere-uniform",
            "--n",
            "40",
            "--d",
            "3",
            "--q",
            "6",
            "--s",
            "3",
            "--m",
            "512",
            "--seed",
            "5",
            "--lambda",
            "0.1",
            "--output",
        ];
        let mut pass = base.to_vec();
        let out_str = out.to_str().unwrap();
        pass.push(out_str);
        pass.extend_from_slice(&["--max-eps", "50"]);
        assert_eq!(run_from(args(&pass)), EXIT_OK);
        let report: SpectralReport =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert!(report.achieved_eps.is_finite() && report.achieved_eps >= 0.0);
        assert!(report.stat_dim > 0.0);
        assert_eq!(report.n, 40);
        assert_eq!(report.m, 512);

        let mut fail = base.to_vec();
        fail.push(out_str);
        fail.extend_from_slice(&["--max-eps", "0"]);
        assert_eq!(run_from(args(&fail)), EXIT_VERIFY_FAILED);
    }

    #[test]
    fn krr_reports_and_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let summary_path = dir.path().join("krr.json");
        let pred_path = dir.path().join("pred.csv");
        let code = run_from(args(&[
            "krr",
            "--synthetic",
            "smooth-regression",
            "--n",
            "60",
            "--d",
            "3",
            "--q",
            "8",
            "--s",
            "4",
            "--m",
            "128",
            "--seed",
            "3",
            "--lambda",
            "0.05",
            "--exact",
            "--output",
            summary_path.to_str().unwrap(),
            "--predictions-out",
            pred_path.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&summary_path).unwrap()).unwrap();
        assert_eq!(summary["n_train"], 48);
        assert_eq!(summary["n_test"], 12);
        assert!(summary["test_mse"].as_f64().unwrap() > 0.0);
        assert!(summary["relative_gap"].as_f64().unwrap() >= 0.0);
        let pred = fs::read_to_string(&pred_path).unwrap();
        let mut lines = pred.lines();
        assert_eq!(lines.next().unwrap(), "index,prediction");
        assert_eq!(lines.count(), 12);
        assert!(pred.contains("\n48,"));
    }

    #[test]
    fn kmeans_reports_blob_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let summary_path = dir.path().join("kmeans.json");
        let assign_path = dir.path().join("assign.csv");
        let code = run_from(args(&[
            "kmeans",
            "--synthetic",
            "blobs",
            "--n",
            "40",
            "--d",
            "3",
            "--q",
            "6",
            "--s",
            "3",
            "--m",
            "64",
            "--seed",
            "2",
            "--k",
            "2",
            "--exact",
            "--output",
            summary_path.to_str().unwrap(),
            "--assignments-out",
            assign_path.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&summary_path).unwrap()).unwrap();
        assert_eq!(summary["label_agreement"], 1.0);
        assert!(summary["objective"].as_f64().unwrap() >= 0.0);
        assert!(summary["exact_objective"].as_f64().unwrap() >= 0.0);
        let assign = fs::read_to_string(&assign_path).unwrap();
        assert_eq!(assign.lines().next().unwrap(), "index,cluster");
        assert_eq!(assign.lines().count(), 41);
    }

    #[test]
    fn config_file_drives_a_run() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        let out = dir.path().join("z.gzkf");
        fs::write(
            &conf,
            format!(
                "synthetic = sphere-uniform\nn = 10\nd = 3\nq = 4\ns = 2\nm = 8\n\
                 seed = 7\nfeatures-out = {}\n",
                out.display()
            ),
        )
        .unwrap();
        let code = run_from(args(&["build-features", "--config", conf.to_str().unwrap()]));
        assert_eq!(code, EXIT_OK);
        let z = FeatureMatrix::load_binary(&out).unwrap();
        assert_eq!(z.n(), 10);
        assert_eq!(z.seed(), 7);

        // flag overrides the config value
        let out2 = dir.path().join("z2.gzkf");
        let code = run_from(args(&[
            "build-features",
            "--config",
            conf.to_str().unwrap(),
            "--m",
            "4",
            "--features-out",
            out2.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        let z2 = FeatureMatrix::load_binary(&out2).unwrap();
        assert_eq!(z2.data().nrows(), 4 * 2);
    }

    #[test]
    fn bench_emits_throughput() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bench.json");
        let code = run_from(args(&[
            "bench",
            "--n",
            "50",
            "--d",
            "3",
            "--q",
            "4",
            "--s",
            "2",
            "--m",
            "32",
            "--repeats",
            "2",
            "--output",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(summary["repeats"], 2);
        assert_eq!(summary["feature_entries"], 32.0 * 2.0 * 50.0);
        assert!(summary["model_fingerprint"].as_str().unwrap().len() == 16);
    }
}
