//! The `cdash` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    chunk_average, chunk_units, exact_shapley, g_shapley, mlp_game, tmc_shapley, GShapConfig,
    TmcConfig, MAX_EXACT_PLAYERS,
};
use crate::corruption::{flip_labels, inject_gaussian_noise, inject_missing, CorruptionReport};
use crate::dataset::{
    parse_table, partition_fixed, partition_temporal, split_train_validation, ChunkMode,
    ChunkPartition, FeatureKind, Granularity, MissingPolicy, Schema, Split, Table, Task,
};
use crate::error::Error;
use crate::evaluation::{
    detection_recall, lof_average_after_removal, removal_curve, time_run, write_curve_csv,
    write_json, MachineFingerprint, RemovalConfig, SpeedupReport,
};
use crate::model::{Architecture, MetricSpec, TrainConfig};
use crate::valuation::{cdash_value, CdashConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "cdash",
    version,
    about = "Chunk-level data valuation for tabular datasets",
    args_override_self = true
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Value the chunks (or rows) of a CSV dataset.
    Value(ValueArgs),
    /// Write a corrupted copy of a CSV dataset plus the ground-truth mask.
    Corrupt(CorruptArgs),
    /// Evaluate a valuation report.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Time two methods on the same data and report the speedup.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cdash,
    Tmc,
    Gshap,
    Exact,
    ChunkAvg,
}

impl Method {
    fn tag(self) -> &'static str {
        match self {
            Method::Cdash => "cdash",
            Method::Tmc => "tmc",
            Method::Gshap => "gshap",
            Method::Exact => "exact",
            Method::ChunkAvg => "chunk-avg",
        }
    }

    /// Whether the method values chunks (as opposed to single rows).
    fn per_chunk(self) -> bool {
        !matches!(self, Method::Tmc | Method::Gshap)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MissingArg {
    Drop,
    Mean,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ChunkingArg {
    Fixed,
    Daily,
    Monthly,
}

/// How to read the CSV.
#[derive(Args, Debug, Clone, Default)]
struct SchemaOpts {
    /// Input CSV file (header row required).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column name.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Comma-separated categorical columns to one-hot encode.
    #[arg(long, value_delimiter = ',')]
    categorical: Option<Vec<String>>,
    /// Timestamp column (needed for daily/monthly chunking).
    #[arg(long)]
    timestamp: Option<String>,
    #[arg(long)]
    delimiter: Option<char>,
    /// Missing-value policy.
    #[arg(long, value_enum)]
    missing: Option<MissingArg>,
}

/// Valuation settings; every field may also come from `--config`.
#[derive(Args, Debug, Clone, Default)]
struct RunOpts {
    #[command(flatten)]
    schema: SchemaOpts,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long, value_enum)]
    chunking: Option<ChunkingArg>,
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Hidden layer widths, e.g. `64,32`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Subsets per pool (k).
    #[arg(long)]
    subsets: Option<usize>,
    /// Chunks per subset.
    #[arg(long)]
    subset_chunks: Option<usize>,
    /// Gate threshold: minimum accuracy, or maximum RMSE for regression.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Scale constant C.
    #[arg(long)]
    constant: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    max_attempts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TMC walk tolerance; `inf` truncates immediately, `none` never.
    #[arg(long)]
    tolerance: Option<String>,
    #[arg(long)]
    max_permutations: Option<usize>,
    #[arg(long)]
    epochs_per_fit: Option<usize>,
    /// Cap on rows times permutations for the Monte-Carlo baselines.
    #[arg(long)]
    budget: Option<u64>,
}

macro_rules! fill {
    ($dst:expr, $src:expr; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl RunOpts {
    /// Fill unset fields from `other` (lower precedence).
    fn fill_from(&mut self, other: &RunOpts) {
        fill!(self.schema, other.schema; data, target, task, categorical, timestamp, delimiter, missing);
        fill!(self, other; method, validation_fraction, chunking, chunk_size, hidden, subsets, subset_chunks,
            threshold, eta, constant, eps, max_iters, max_attempts, seed, tolerance, max_permutations,
            epochs_per_fit, budget);
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "config",
    no_binary_name = true,
    disable_help_flag = true,
    disable_version_flag = true
)]
struct FileOpts {
    #[command(flatten)]
    run: RunOpts,
}

#[derive(Args, Debug)]
struct ValueArgs {
    /// Flat `key = value` file; keys are the long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunOpts,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-iteration values as trace.csv.
    #[arg(long)]
    trace: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Noise,
    Flip,
    Missing,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[command(flatten)]
    schema: SchemaOpts,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    fraction: f64,
    /// Noise scale in per-feature standard deviations.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupted CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Mask JSON to write (default: `<out>.mask.json`).
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum EvaluateCommand {
    /// Retrain after removing the lowest-valued units.
    Removal(RemovalArgs),
    /// Mean |LOF| of the retained rows.
    Lof(LofArgs),
    /// Share of corrupted rows caught by removal.
    Recall(RecallArgs),
}

#[derive(Args, Debug)]
struct ReportInput {
    /// report.json written by `value`.
    #[arg(long)]
    report: PathBuf,
    /// Dataset (default: the path recorded in the report).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Removal fractions.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    lambdas: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RemovalArgs {
    #[command(flatten)]
    input: ReportInput,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Learning rate for retraining.
    #[arg(long, default_value_t = 0.001)]
    train_eta: f64,
    /// Seed for the retraining repeats (default: the report's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct LofArgs {
    #[command(flatten)]
    input: ReportInput,
    #[arg(long, default_value_t = crate::evaluation::DEFAULT_LOF_NEIGHBORS)]
    neighbors: usize,
}

#[derive(Args, Debug)]
struct RecallArgs {
    #[command(flatten)]
    input: ReportInput,
    /// Mask JSON written by `corrupt`.
    #[arg(long)]
    mask: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunOpts,
    /// Baseline method (T1).
    #[arg(long, value_enum)]
    a: Method,
    /// Candidate method (T2).
    #[arg(long, value_enum)]
    b: Method,
    /// Skip the untimed warm-up run of each method.
    #[arg(long)]
    no_warm_up: bool,
    #[arg(long)]
    out: PathBuf,
}

/// A failed command and its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T> Classify<T> for crate::Result<T> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| Failure::Usage(e.to_string()))
    }

    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| match e {
            Error::TooManyPlayers { .. }
            | Error::InfeasiblePool(_)
            | Error::BudgetExceeded { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        })
    }
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Run with the process arguments and return the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Run with explicit arguments (the first is the program name).
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.threads {
        Some(0) => usage("--threads must be at least 1"),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Failure::Runtime(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("cdash: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Value(args) => cmd_value(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Evaluate(EvaluateCommand::Removal(args)) => cmd_removal(args),
        Command::Evaluate(EvaluateCommand::Lof(args)) => cmd_lof(args),
        Command::Evaluate(EvaluateCommand::Recall(args)) => cmd_recall(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Selftest => cmd_selftest(),
    }
}

/// Parse a flat `key = value` config file into options.
fn read_config(path: &Path) -> CliResult<RunOpts> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                n + 1
            ));
        };
        tokens.push(format!("--{}", key.trim().replace('_', "-")));
        tokens.push(value.trim().to_string());
    }
    FileOpts::try_parse_from(tokens)
        .map(|f| f.run)
        .map_err(|e| Failure::Usage(format!("config {}: {}", path.display(), e.kind_message())))
}

trait KindMessage {
    fn kind_message(&self) -> String;
}

impl KindMessage for clap::Error {
    fn kind_message(&self) -> String {
        self.to_string()
            .lines()
            .next()
            .unwrap_or_default()
            .trim_start_matches("error: ")
            .to_string()
    }
}

/// Fully resolved settings of a valuation run, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub data: PathBuf,
    pub target: String,
    pub task: Task,
    pub categorical: Vec<String>,
    pub timestamp: Option<String>,
    pub delimiter: char,
    pub missing: MissingPolicy,
    pub validation_fraction: f64,
    pub chunking: ChunkMode,
    pub chunk_size: usize,
    pub hidden: [usize; 2],
    pub cdash: CdashConfig,
    pub tmc: TmcConfig,
    pub gshap: GShapConfig,
}

fn resolve(flags: RunOpts, config: Option<&Path>) -> CliResult<RunConfig> {
    let mut opts = flags;
    if let Some(path) = config {
        opts.fill_from(&read_config(path)?);
    }
    let s = &opts.schema;
    let Some(data) = s.data.clone() else {
        return usage("--data is required");
    };
    let Some(target) = s.target.clone() else {
        return usage("--target is required");
    };
    let task = match s.task.unwrap_or(TaskArg::Classification) {
        TaskArg::Classification => Task::Classification,
        TaskArg::Regression => Task::Regression,
    };
    let chunking = match opts.chunking.unwrap_or(ChunkingArg::Fixed) {
        ChunkingArg::Fixed => ChunkMode::Fixed,
        ChunkingArg::Daily => ChunkMode::Daily,
        ChunkingArg::Monthly => ChunkMode::Monthly,
    };
    if chunking != ChunkMode::Fixed && s.timestamp.is_none() {
        return usage("daily/monthly chunking needs --timestamp");
    }
    let hidden = match opts.hidden.as_deref() {
        None => Architecture::DEFAULT_HIDDEN,
        Some(&[a, b]) if a > 0 && b > 0 => [a, b],
        Some(_) => return usage("--hidden takes two positive widths"),
    };
    let validation_fraction = opts.validation_fraction.unwrap_or(0.2);
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return usage("--validation-fraction must lie in (0, 1)");
    }
    let chunk_size = opts.chunk_size.unwrap_or(250);
    if chunk_size == 0 {
        return usage("--chunk-size must be positive");
    }
    let tolerance = match opts.tolerance.as_deref() {
        None => TmcConfig::default().tolerance,
        Some("none") => None,
        Some(t) => Some(
            t.parse::<f64>()
                .map_err(|_| Failure::Usage(format!("bad --tolerance `{t}`")))?,
        ),
    };
    let defaults = CdashConfig::default();
    let seed = opts.seed.unwrap_or(defaults.seed);
    let eta = opts.eta.unwrap_or(defaults.eta);
    let eps = opts.eps.unwrap_or(defaults.eps);
    let max_iters = opts.max_iters.unwrap_or(defaults.max_iters);
    let cdash = CdashConfig {
        subset_count: opts.subsets.unwrap_or(defaults.subset_count),
        subset_chunks: opts.subset_chunks,
        threshold: opts.threshold.unwrap_or(match task {
            Task::Classification => 0.5,
            Task::Regression => 25.0,
        }),
        eta,
        constant: opts.constant.unwrap_or(defaults.constant),
        eps,
        max_iters,
        max_attempts: opts.max_attempts.unwrap_or(defaults.max_attempts),
        seed,
        record_trace: false,
    };
    let tmc_defaults = TmcConfig::default();
    let budget = opts.budget.unwrap_or(tmc_defaults.budget);
    let max_permutations = opts.max_permutations.unwrap_or(max_iters);
    let tmc = TmcConfig {
        tolerance,
        max_permutations,
        epochs_per_fit: opts.epochs_per_fit.unwrap_or(tmc_defaults.epochs_per_fit),
        eta,
        eps: Some(eps),
        seed,
        budget,
    };
    let gshap = GShapConfig {
        eta,
        max_permutations,
        eps: Some(eps),
        seed,
        budget,
    };
    Ok(RunConfig {
        method: opts.method.unwrap_or(Method::Cdash),
        data,
        target,
        task,
        categorical: s.categorical.clone().unwrap_or_default(),
        timestamp: s.timestamp.clone(),
        delimiter: s.delimiter.unwrap_or(','),
        missing: match s.missing.unwrap_or(MissingArg::Drop) {
            MissingArg::Drop => MissingPolicy::DropRow,
            MissingArg::Mean => MissingPolicy::MeanImpute,
        },
        validation_fraction,
        chunking,
        chunk_size,
        hidden,
        cdash,
        tmc,
        gshap,
    })
}

impl RunConfig {
    fn schema(&self) -> Schema {
        let mut schema = Schema::new(self.target.clone(), self.task)
            .categorical(self.categorical.clone())
            .missing(self.missing);
        if let Some(ts) = &self.timestamp {
            schema = schema.timestamp(ts.clone());
        }
        schema.delimiter = self.delimiter;
        schema
    }

    fn metric(&self) -> MetricSpec {
        MetricSpec::for_task(self.task)
    }

    /// The same settings as a `--config` file.
    fn to_config_file(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("method", self.method.tag().into());
        kv("data", self.data.display().to_string());
        kv("target", self.target.clone());
        kv("task", format!("{:?}", self.task).to_lowercase());
        if !self.categorical.is_empty() {
            kv("categorical", self.categorical.join(","));
        }
        if let Some(ts) = &self.timestamp {
            kv("timestamp", ts.clone());
        }
        kv("delimiter", self.delimiter.to_string());
        kv(
            "missing",
            match self.missing {
                MissingPolicy::DropRow => "drop".into(),
                MissingPolicy::MeanImpute => "mean".into(),
            },
        );
        kv("validation-fraction", self.validation_fraction.to_string());
        kv("chunking", format!("{:?}", self.chunking).to_lowercase());
        kv("chunk-size", self.chunk_size.to_string());
        kv("hidden", format!("{},{}", self.hidden[0], self.hidden[1]));
        let c = &self.cdash;
        kv("subsets", c.subset_count.to_string());
        if let Some(s) = c.subset_chunks {
            kv("subset-chunks", s.to_string());
        }
        kv("threshold", c.threshold.to_string());
        kv("eta", c.eta.to_string());
        kv("constant", c.constant.to_string());
        kv("eps", c.eps.to_string());
        kv("max-iters", c.max_iters.to_string());
        kv("max-attempts", c.max_attempts.to_string());
        kv("seed", c.seed.to_string());
        kv(
            "tolerance",
            self.tmc.tolerance.map_or("none".into(), |t| t.to_string()),
        );
        kv("max-permutations", self.tmc.max_permutations.to_string());
        kv("epochs-per-fit", self.tmc.epochs_per_fit.to_string());
        kv("budget", self.tmc.budget.to_string());
        out
    }
}

/// Loaded data ready for valuation.
struct Prepared {
    split: Split,
    partition: ChunkPartition,
    arch: Architecture,
    sha256: String,
    rows: usize,
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn prepare(cfg: &RunConfig, data: &Path) -> CliResult<Prepared> {
    let sha256 = file_sha256(data)?;
    let table = Table::read(data, cfg.delimiter).usage()?;
    let ds = parse_table(&table, &cfg.schema()).usage()?;
    let split = split_train_validation(&ds, cfg.validation_fraction, cfg.cdash.seed).usage()?;
    let partition = match cfg.chunking {
        ChunkMode::Fixed => partition_fixed(&split.train, cfg.chunk_size.min(split.train.n_rows())),
        ChunkMode::Daily => partition_temporal(&split.train, Granularity::Daily),
        ChunkMode::Monthly => partition_temporal(&split.train, Granularity::Monthly),
    }
    .usage()?;
    let arch = Architecture::for_dataset(&split.train, cfg.hidden).usage()?;
    Ok(Prepared {
        split,
        partition,
        arch,
        sha256,
        rows: ds.n_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitValue {
    pub id: usize,
    /// First training row of the unit (inclusive).
    pub row_start: usize,
    /// One past the last training row.
    pub row_end: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub sha256: String,
    pub rows: usize,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub stratified: bool,
    pub split_warning: Option<String>,
}

/// Everything needed to interpret and reproduce a valuation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationReport {
    pub method: Method,
    pub version: String,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    /// Metric the values are measured in; rmse values are negated internally.
    pub metric: String,
    pub units: Vec<UnitValue>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
    /// Subsets kept without passing the gate (cdash only).
    pub gate_violations: usize,
}

struct Valued {
    values: Vec<f64>,
    units: ChunkPartition,
    iterations: usize,
    converged: bool,
    history: Vec<Vec<f64>>,
    gate_violations: usize,
}

fn check_method(cfg: &RunConfig, method: Method, prep: &Prepared) -> CliResult<()> {
    if method == Method::Exact && prep.partition.len() > MAX_EXACT_PLAYERS {
        return usage(format!(
            "exact enumeration supports at most {MAX_EXACT_PLAYERS} chunks, this partition has {}",
            prep.partition.len()
        ));
    }
    if method == Method::Cdash {
        cfg.cdash.validate(prep.partition.len()).usage()?;
    }
    if matches!(method, Method::Tmc | Method::Gshap | Method::ChunkAvg) {
        let required = prep.split.train.n_rows() as u64 * cfg.tmc.max_permutations as u64;
        if required > cfg.tmc.budget {
            return usage(format!(
                "work budget exceeded: {required} > {} (raise --budget)",
                cfg.tmc.budget
            ));
        }
    }
    Ok(())
}

fn valuate(cfg: &RunConfig, method: Method, prep: &Prepared, trace: bool) -> crate::Result<Valued> {
    let train = &prep.split.train;
    let val = &prep.split.validation;
    let metric = cfg.metric();
    let singles = || ChunkPartition::singletons(train.n_rows());
    Ok(match method {
        Method::Cdash => {
            let mut c = cfg.cdash.clone();
            c.record_trace = trace;
            let r = cdash_value(train, val, &prep.partition, &prep.arch, metric, &c)?;
            let gate_violations = r
                .trace
                .iterations
                .iter()
                .map(|it| it.pool.violations.iter().filter(|&&v| v).count())
                .sum();
            Valued {
                values: r.values,
                units: prep.partition.clone(),
                iterations: r.iterations_run,
                converged: r.converged,
                history: r.history,
                gate_violations,
            }
        }
        Method::Exact => {
            let ps = mlp_game(
                train,
                val,
                &prep.arch,
                metric,
                cfg.tmc.epochs_per_fit,
                cfg.tmc.eta,
                cfg.tmc.seed,
                chunk_units(&prep.partition),
            )?;
            let values = exact_shapley(&ps)?;
            Valued {
                history: vec![values.clone()],
                values,
                units: prep.partition.clone(),
                iterations: 1,
                converged: true,
                gate_violations: 0,
            }
        }
        Method::Tmc | Method::Gshap | Method::ChunkAvg => {
            let r = if method == Method::Gshap {
                g_shapley(train, val, &prep.arch, metric, &cfg.gshap)?
            } else {
                tmc_shapley(train, val, &prep.arch, metric, &cfg.tmc)?
            };
            let (values, units, history) = if method == Method::ChunkAvg {
                let history = r
                    .history
                    .iter()
                    .map(|h| chunk_average(h, &prep.partition))
                    .collect::<crate::Result<_>>()?;
                (
                    chunk_average(&r.values, &prep.partition)?,
                    prep.partition.clone(),
                    history,
                )
            } else {
                (r.values, singles(), r.history)
            };
            Valued {
                values,
                units,
                iterations: r.iterations_run,
                converged: r.converged,
                history,
                gate_violations: 0,
            }
        }
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_value(args: ValueArgs) -> CliResult<()> {
    let cfg = resolve(args.run, args.config.as_deref())?;
    let prep = prepare(&cfg, &cfg.data)?;
    check_method(&cfg, cfg.method, &prep)?;
    create_dir(&args.out)?;
    let started = std::time::Instant::now();
    let valued = valuate(&cfg, cfg.method, &prep, args.trace).runtime()?;
    let wall_time = started.elapsed().as_secs_f64();

    let units: Vec<UnitValue> = valued
        .units
        .ranges()
        .iter()
        .zip(&valued.values)
        .enumerate()
        .map(|(id, (r, &value))| UnitValue {
            id,
            row_start: r.start,
            row_end: r.end,
            value,
        })
        .collect();
    let mut csv = String::from("unit_id,row_start,row_end,value\n");
    for u in &units {
        let _ = writeln!(csv, "{},{},{},{}", u.id, u.row_start, u.row_end, u.value);
    }
    write_text(&args.out.join("values.csv"), &csv)?;
    if args.trace {
        let mut trace = String::from("iteration,unit_id,value\n");
        for (t, row) in valued.history.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(trace, "{t},{j},{v}");
            }
        }
        write_text(&args.out.join("trace.csv"), &trace)?;
    }
    let report = ValuationReport {
        method: cfg.method,
        version: VERSION.to_string(),
        dataset: DatasetInfo {
            path: cfg.data.clone(),
            sha256: prep.sha256.clone(),
            rows: prep.rows,
            train_rows: prep.split.train.n_rows(),
            validation_rows: prep.split.validation.n_rows(),
            stratified: prep.split.stratified,
            split_warning: prep.split.warning.clone(),
        },
        metric: format!("{:?}", cfg.metric().kind).to_lowercase(),
        config: cfg.clone(),
        units,
        iterations: valued.iterations,
        converged: valued.converged,
        wall_time,
        gate_violations: valued.gate_violations,
    };
    write_json(&report, &args.out.join("report.json")).runtime()?;
    write_text(&args.out.join("run.conf"), &cfg.to_config_file())?;
    println!(
        "{}: {} units valued in {} iterations ({:.2}s) -> {}",
        cfg.method.tag(),
        report.units.len(),
        report.iterations,
        wall_time,
        args.out.display()
    );
    Ok(())
}

fn schema_from(opts: &SchemaOpts) -> CliResult<(PathBuf, Schema)> {
    let run = RunOpts {
        schema: opts.clone(),
        ..RunOpts::default()
    };
    let cfg = resolve(run, None)?;
    Ok((cfg.data.clone(), cfg.schema()))
}

fn cmd_corrupt(args: CorruptArgs) -> CliResult<()> {
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return usage(format!("--fraction {} must lie in (0, 1]", args.fraction));
    }
    if args.kind == KindArg::Noise && !(args.sigma > 0.0) {
        return usage("--sigma must be positive");
    }
    let (data, schema) = schema_from(&args.schema)?;
    let mut table = Table::read(&data, schema.delimiter).usage()?;
    let ds = parse_table(&table, &schema).usage()?;
    let target_col = table.column(&schema.target_column).usage()?;
    let (corrupted, report) = match args.kind {
        KindArg::Noise => inject_gaussian_noise(&ds, args.fraction, args.sigma, args.seed),
        KindArg::Flip => flip_labels(&ds, args.fraction, args.seed),
        KindArg::Missing => inject_missing(&ds, args.fraction, args.seed),
    }
    .usage()?;

    for &i in &report.affected_rows {
        let record = &mut table.rows[ds.source_rows[i]];
        if corrupted.targets[i].to_bits() != ds.targets[i].to_bits() {
            record[target_col] = corrupted.class_labels[corrupted.targets[i] as usize].clone();
        }
        for (j, kind) in ds.feature_kinds.iter().enumerate() {
            let new = corrupted.features[[i, j]];
            if new.to_bits() == ds.features[[i, j]].to_bits() {
                continue;
            }
            record[kind.source()] = match kind {
                _ if new.is_nan() => String::new(),
                FeatureKind::Numeric { .. } => new.to_string(),
                FeatureKind::Indicator { .. } => {
                    unreachable!("injectors leave indicators alone unless blanking")
                }
            };
        }
    }
    table.write(&args.out).runtime()?;
    let mask = CorruptionReport {
        affected_rows: report
            .affected_rows
            .iter()
            .map(|&i| ds.source_rows[i])
            .collect(),
        ..report
    };
    let mask_path = args
        .mask
        .unwrap_or_else(|| PathBuf::from(format!("{}.mask.json", args.out.display())));
    write_json(&mask, &mask_path).runtime()?;
    println!(
        "{} of {} rows corrupted -> {} (mask {})",
        mask.affected_rows.len(),
        ds.n_rows(),
        args.out.display(),
        mask_path.display()
    );
    Ok(())
}

/// A report and its dataset, reloaded and checked against each other.
struct Loaded {
    report: ValuationReport,
    prep: Prepared,
    units: ChunkPartition,
    values: Vec<f64>,
}

fn load_report(input: &ReportInput) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(&input.report).map_err(|e| {
        Failure::Usage(format!(
            "cannot read report {}: {e}",
            input.report.display()
        ))
    })?;
    let report: ValuationReport = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("malformed report: {e}")))?;
    let data = input
        .data
        .clone()
        .unwrap_or_else(|| report.dataset.path.clone());
    let sha = file_sha256(&data)?;
    if sha != report.dataset.sha256 {
        return usage(format!(
            "dataset {} does not match the report (sha256 {} vs {})",
            data.display(),
            sha,
            report.dataset.sha256
        ));
    }
    if input.lambdas.iter().any(|l| !(0.0..1.0).contains(l)) {
        return usage("--lambdas must lie in [0, 1)");
    }
    let prep = prepare(&report.config, &data)?;
    let ranges = report
        .units
        .iter()
        .map(|u| u.row_start..u.row_end)
        .collect();
    let mode = if report.method.per_chunk() {
        report.config.chunking
    } else {
        ChunkMode::Fixed
    };
    let units = ChunkPartition::from_ranges(ranges, mode).usage()?;
    if units.end() > prep.split.train.n_rows() {
        return usage("report units do not fit the dataset");
    }
    let values = report.units.iter().map(|u| u.value).collect();
    Ok(Loaded {
        report,
        prep,
        units,
        values,
    })
}

fn cmd_removal(args: RemovalArgs) -> CliResult<()> {
    let loaded = load_report(&args.input)?;
    if args.repeats == 0 || args.epochs == 0 || args.batch_size == 0 {
        return usage("--repeats, --epochs and --batch-size must be positive");
    }
    let cfg = RemovalConfig {
        train: TrainConfig {
            epochs: args.epochs,
            eta: args.train_eta,
            batch_size: args.batch_size,
        },
        repeats: args.repeats,
        seed: args.seed.unwrap_or(loaded.report.config.cdash.seed),
    };
    let metric = loaded.report.config.metric();
    let mut curve = removal_curve(
        &loaded.prep.split.train,
        &loaded.prep.split.validation,
        &loaded.units,
        &loaded.values,
        &args.input.lambdas,
        &loaded.prep.arch,
        metric,
        &cfg,
    )
    .runtime()?;
    // report raw metric units
    curve
        .mean_scores
        .iter_mut()
        .for_each(|m| *m = metric.raw(*m));
    create_dir(&args.input.out)?;
    let mut buf = Vec::new();
    write_curve_csv(&curve, &mut buf).runtime()?;
    write_text(
        &args.input.out.join("removal_curve.csv"),
        &String::from_utf8_lossy(&buf),
    )?;
    write_json(&curve, &args.input.out.join("removal_curve.json")).runtime()?;
    println!(
        "removal curve with {} points -> {}",
        curve.lambdas.len(),
        args.input.out.display()
    );
    Ok(())
}

fn cmd_lof(args: LofArgs) -> CliResult<()> {
    let loaded = load_report(&args.input)?;
    let mut csv = String::from("lambda,mean_abs_lof\n");
    for &l in &args.input.lambdas {
        let v = lof_average_after_removal(
            &loaded.prep.split.train,
            &loaded.units,
            &loaded.values,
            l,
            args.neighbors,
        )
        .usage()?;
        let _ = writeln!(csv, "{l},{v}");
    }
    create_dir(&args.input.out)?;
    write_text(&args.input.out.join("lof.csv"), &csv)?;
    println!("lof table -> {}", args.input.out.display());
    Ok(())
}

fn cmd_recall(args: RecallArgs) -> CliResult<()> {
    let loaded = load_report(&args.input)?;
    let text = std::fs::read_to_string(&args.mask)
        .map_err(|e| Failure::Usage(format!("cannot read mask {}: {e}", args.mask.display())))?;
    let mask: CorruptionReport =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("malformed mask: {e}")))?;
    let source: std::collections::BTreeSet<usize> = mask.affected_rows.iter().copied().collect();
    let train = &loaded.prep.split.train;
    let corrupted: Vec<usize> = (0..train.n_rows())
        .filter(|&i| source.contains(&train.source_rows[i]))
        .collect();
    if corrupted.is_empty() {
        return usage("no masked row falls in the training split");
    }
    let mut csv = String::from("lambda,recall\n");
    for &l in &args.input.lambdas {
        let r = detection_recall(&loaded.values, &corrupted, &loaded.units, l).usage()?;
        let _ = writeln!(csv, "{l},{r}");
    }
    create_dir(&args.input.out)?;
    write_text(&args.input.out.join("recall.csv"), &csv)?;
    println!("recall table -> {}", args.input.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct BenchReport {
    baseline: &'static str,
    candidate: &'static str,
    warm_up: bool,
    t_baseline: Option<f64>,
    t_candidate: Option<f64>,
    speedup: Option<f64>,
    machine: MachineFingerprint,
    error: Option<String>,
    config: RunConfig,
    dataset_sha256: String,
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let cfg = resolve(args.run, args.config.as_deref())?;
    let prep = prepare(&cfg, &cfg.data)?;
    check_method(&cfg, args.a, &prep)?;
    check_method(&cfg, args.b, &prep)?;
    create_dir(&args.out)?;
    let warm_up = !args.no_warm_up;
    let mut report = BenchReport {
        baseline: args.a.tag(),
        candidate: args.b.tag(),
        warm_up,
        t_baseline: None,
        t_candidate: None,
        speedup: None,
        machine: MachineFingerprint::current(),
        error: None,
        config: cfg.clone(),
        dataset_sha256: prep.sha256.clone(),
    };
    let path = args.out.join("bench.json");
    let run = |m: Method| time_run(|| valuate(&cfg, m, &prep, false).map(|_| ()));
    let outcome = (|| -> crate::Result<()> {
        if warm_up {
            run(args.a)?;
        }
        report.t_baseline = Some(run(args.a)?);
        if warm_up {
            run(args.b)?;
        }
        report.t_candidate = Some(run(args.b)?);
        let s = SpeedupReport::from_times(
            report.t_baseline.unwrap_or(0.0),
            report.t_candidate.unwrap_or(0.0),
        )?;
        report.speedup = Some(s.speedup);
        Ok(())
    })();
    if let Err(e) = &outcome {
        report.error = Some(e.to_string());
    }
    write_json(&report, &path).runtime()?;
    outcome.runtime()?;
    println!(
        "{} {:.3}s vs {} {:.3}s: speedup {:.1}x -> {}",
        report.baseline,
        report.t_baseline.unwrap_or_default(),
        report.candidate,
        report.t_candidate.unwrap_or_default(),
        report.speedup.unwrap_or_default(),
        path.display()
    );
    Ok(())
}

fn cmd_selftest() -> CliResult<()> {
    let checks = crate::selftest::run_checks();
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {:<32} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    println!(
        "{} of {} checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} self-test checks failed"
        )));
    }
    Ok(())
}
