//! Command-line surface for the replication simulator: single runs, offline
//! optima, parameter sweeps, the lower-bound adversary, cost allocation
//! tables and trace ingestion.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use dynrep::allocation::classify_and_allocate;
use dynrep::engine::{run, write_log_csv};
use dynrep::generators::{
    ingest_trace, make_consistency_tight, make_robustness_tight, make_wang_counterexample,
    read_predictions_csv, read_trace_csv, run_adversary, synthesize_predictions, write_predictions_csv,
    write_trace_csv, IngestConfig,
};
use dynrep::offline::{brute_force_optimal, optimal_offline, optimal_offline_cost, optl, MAX_DP_SERVERS};
use dynrep::policies::{AdaptivePolicyConfig, PolicyConfig, PredictivePolicy};
use dynrep::{
    AllocationError, CostParams, EngineError, GeneratorError, ModelError, OfflineError, Prediction,
    PredictionStream, RequestTrace,
};

/// Substitute for α = 0, which lies outside the policy's domain.
pub const ALPHA_ZERO_PROXY: f64 = 0.01;

pub const RESULT_HEADER: &str = "policy,alpha,lambda,accuracy,trial,online_cost,opt_cost,optl,ratio";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    /// The reader of our output went away; not worth a message.
    #[error("output closed")]
    OutputClosed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::OutputClosed => 0,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            CliError::OutputClosed
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<OfflineError> for CliError {
    fn from(e: OfflineError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Model(m) => m.into(),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::Engine(e) => e.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<AllocationError> for CliError {
    fn from(e: AllocationError) -> Self {
        match e {
            AllocationError::Model(m) => m.into(),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dynrep", version, about = "Cost-driven data replication simulator")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Read default flag values from a `key = value` file. Command-line
    /// flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy over a trace and print its accounted cost.
    Simulate(SimulateArgs),
    /// Compute the offline optimum or its lower bound.
    Offline(OfflineArgs),
    /// Sweep a policy/α/λ/accuracy grid and write a CSV result table.
    Experiment(ExperimentArgs),
    /// Generate an adversarial trace against a policy.
    Adversary(AdversaryArgs),
    /// Attribute a predictive run's cost to individual requests.
    Allocate(AllocateArgs),
    /// Convert an object-store access log into a native trace.
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExampleKind {
    Robustness,
    Consistency,
    Wang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Predictive,
    Conventional,
    Adaptive,
    Wang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Dp,
    Brute,
    Optl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Normalize {
    Dp,
    Optl,
}

/// Where the trace comes from: a native file or a built-in example.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Native trace file (`# n=<count>` then `time,server` rows).
    #[arg(long, value_name = "FILE", conflicts_with = "example")]
    pub trace: Option<PathBuf>,
    /// Built-in example instance.
    #[arg(long, value_enum)]
    pub example: Option<ExampleKind>,
    /// ε of the example instance.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    /// Request count of the robustness and Wang examples.
    #[arg(long, default_value_t = 2000)]
    pub m: usize,
    /// Cycle count of the consistency example.
    #[arg(long, default_value_t = 1)]
    pub cycles: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = PolicyKind::Predictive)]
    pub policy: PolicyKind,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Tolerated excess over 2 before the adaptive policy stops trusting
    /// predictions.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Requests served from predictions before the adaptive policy starts
    /// monitoring.
    #[arg(long, default_value_t = AdaptivePolicyConfig::DEFAULT_WARMUP)]
    pub warmup: usize,
}

impl PolicyArgs {
    fn config(&self, alpha: f64) -> Result<PolicyConfig, CliError> {
        policy_config(self.policy, alpha, self.beta, self.warmup)
    }
}

fn policy_config(kind: PolicyKind, alpha: f64, beta: f64, warmup: usize) -> Result<PolicyConfig, CliError> {
    Ok(match kind {
        PolicyKind::Predictive => {
            PredictivePolicy::new(alpha, 1.0)?;
            PolicyConfig::Predictive { alpha }
        }
        PolicyKind::Conventional => PolicyConfig::Conventional,
        PolicyKind::Adaptive => PolicyConfig::Adaptive(AdaptivePolicyConfig::with_warmup(alpha, beta, warmup)?),
        PolicyKind::Wang => PolicyConfig::Wang,
    })
}

/// Where predictions come from when the source does not fix them.
#[derive(Debug, Clone, Args)]
pub struct PredictionArgs {
    /// Prediction file (`request_id,prediction` with `within|beyond`).
    #[arg(long, value_name = "FILE", conflicts_with = "accuracy")]
    pub predictions: Option<PathBuf>,
    /// Synthesize predictions that match the ground truth with this
    /// probability.
    #[arg(long)]
    pub accuracy: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub preds: PredictionArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Transfer cost; defaults to the example's own λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Write the replication log here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OfflineArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// α of the example instance.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum, default_value_t = Method::Dp)]
    pub method: Method,
    /// Write the optimal strategy's log here (dp and brute only).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Access log to ingest instead of a native trace.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["trace", "example"])]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub ingest: IngestOptions,
    /// Keep the first N requests of the trace.
    #[arg(long)]
    pub prefix: Option<usize>,
    /// α used to build the example instance.
    #[arg(long, default_value_t = 0.5)]
    pub example_alpha: f64,
    /// Policies to run.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PolicyKind::Predictive])]
    pub policy: Vec<PolicyKind>,
    /// α values; 0 is replaced by 0.01.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 100.0, 1000.0, 10000.0])]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    pub accuracy: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Base seed; each (trial, accuracy) cell derives its own.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = AdaptivePolicyConfig::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value_t = Normalize::Dp)]
    pub normalize: Normalize,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AdversaryArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    /// Write the generated trace here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Write per-request classifications (`request,kind`) here.
    #[arg(long, value_name = "FILE")]
    pub kinds_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AllocateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub preds: PredictionArgs,
    /// `predictive` or `conventional`.
    #[arg(long, value_enum, default_value_t = PolicyKind::Predictive)]
    pub policy: PolicyKind,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestOptions {
    /// Number of servers requests are spread over.
    #[arg(long, default_value_t = 10)]
    pub servers: usize,
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
    /// Raw timestamp units to seconds.
    #[arg(long, default_value_t = 1e-3)]
    pub time_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub timestamp_col: usize,
    #[arg(long, default_value_t = 1)]
    pub op_col: usize,
    #[arg(long, default_value_t = 2)]
    pub object_col: usize,
    /// Operations containing this string are reads.
    #[arg(long, default_value = "GET")]
    pub read_marker: String,
    /// Keep only this object id.
    #[arg(long)]
    pub object: Option<String>,
}

impl IngestOptions {
    fn config(&self, input: &Path, seed: u64, limit: Option<usize>) -> IngestConfig {
        IngestConfig {
            source: input.to_path_buf(),
            timestamp_col: self.timestamp_col,
            op_col: self.op_col,
            object_col: self.object_col,
            read_marker: self.read_marker.clone(),
            object: self.object.clone(),
            time_scale: self.time_scale,
            n: self.servers,
            zipf_exponent: self.zipf,
            seed,
            limit,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub ingest: IngestOptions,
    /// Seed of the server assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the first N reads.
    #[arg(long)]
    pub prefix: Option<usize>,
    /// Write the trace here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Parses `key = value` lines into flag tokens. `#` starts a comment;
/// `true`/`false` values toggle switch flags.
pub fn config_tokens(text: &str) -> Result<Vec<OsString>, CliError> {
    let mut tokens = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", idx + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", idx + 1)));
        }
        match value {
            "true" => tokens.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                tokens.push(format!("--{key}").into());
                tokens.push(value.into());
            }
        }
    }
    Ok(tokens)
}

/// Inserts config-file flags right after the subcommand so that later
/// command-line flags override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let p = iter.next().ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            path = Some(PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let tokens = config_tokens(&text)?;
    // rest[0] is the program name; the subcommand is the first non-flag.
    let pos = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-'));
    match pos {
        Some(p) => {
            let at = p + 2;
            rest.splice(at..at, tokens);
            Ok(rest)
        }
        None => Ok(rest),
    }
}

/// Parses arguments and runs the command, writing results to `out`.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(()) | Err(CliError::OutputClosed) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Offline(a) => cmd_offline(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
        Command::Adversary(a) => cmd_adversary(a, out),
        Command::Allocate(a) => cmd_allocate(a, out),
        Command::Ingest(a) => cmd_ingest(a, out),
    }
}

/// A loaded trace with the predictions and λ it naturally comes with.
struct Loaded {
    trace: RequestTrace,
    preds: Option<PredictionStream>,
    lambda: Option<f64>,
}

fn load_source(src: &SourceArgs, alpha: f64, lambda: Option<f64>) -> Result<Loaded, CliError> {
    match (&src.trace, src.example) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let trace = read_trace_csv(BufReader::new(file))?;
            if trace.requests().len() < 2 {
                return Err(CliError::Validation(format!("{}: trace has no requests", path.display())));
            }
            Ok(Loaded { trace, preds: None, lambda })
        }
        (None, Some(kind)) => {
            let (lam, trace, preds) = match kind {
                ExampleKind::Robustness => {
                    let lam = lambda.unwrap_or(100.0);
                    let (t, p) = make_robustness_tight(alpha, lam, src.eps, src.m)?;
                    (lam, t, p)
                }
                ExampleKind::Consistency => {
                    let lam = lambda.unwrap_or(10.0);
                    let (t, p) = make_consistency_tight(alpha, lam, src.eps, src.cycles)?;
                    (lam, t, p)
                }
                ExampleKind::Wang => {
                    let lam = lambda.unwrap_or(100.0);
                    let t = make_wang_counterexample(lam, src.eps, src.m)?;
                    let p = PredictionStream::uniform(t.requests().len(), Prediction::BeyondLambda);
                    (lam, t, p)
                }
            };
            Ok(Loaded { trace, preds: Some(preds), lambda: Some(lam) })
        }
        (None, None) => Err(CliError::Usage("one of --trace or --example is required".into())),
    }
}

fn require_lambda(lambda: Option<f64>) -> Result<f64, CliError> {
    lambda.ok_or_else(|| CliError::Usage("--lambda is required with --trace".into()))
}

fn resolve_predictions(
    args: &PredictionArgs,
    loaded: &Loaded,
    params: &CostParams,
) -> Result<PredictionStream, CliError> {
    let trace = &loaded.trace;
    if let Some(path) = &args.predictions {
        let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let preds = read_predictions_csv(file)?;
        if preds.len() != trace.requests().len() {
            return Err(ModelError::PredictionCount { expected: trace.requests().len(), got: preds.len() }.into());
        }
        return Ok(preds);
    }
    if let Some(acc) = args.accuracy {
        return Ok(synthesize_predictions(trace, params, acc, args.seed)?);
    }
    Ok(match &loaded.preds {
        Some(p) => p.clone(),
        None => dynrep::ground_truth_predictions(trace, params),
    })
}

fn create(path: &Path) -> Result<io::BufWriter<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(io::BufWriter::new(f))
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load_source(&a.source, a.policy.alpha, a.lambda)?;
    let lambda = require_lambda(loaded.lambda)?;
    let params = CostParams::uniform(lambda, loaded.trace.n())?;
    let preds = resolve_predictions(&a.preds, &loaded, &params)?;
    let config = a.policy.config(a.policy.alpha)?;
    let policy = config.build(&params)?;
    let (log, report) = run(&loaded.trace, &preds, policy, &params)?;
    if let Some(path) = &a.out {
        write_log_csv(&log, create(path)?)?;
    }
    writeln!(out, "policy: {}", config.name())?;
    writeln!(out, "requests: {}", loaded.trace.last_index())?;
    writeln!(out, "transfers: {}", log.transfers.len())?;
    writeln!(out, "storage_cost: {:.9}", report.storage_cost)?;
    writeln!(out, "transfer_cost: {:.9}", report.transfer_cost)?;
    writeln!(out, "excluded_final_regular: {:.9}", report.excluded_final_regular)?;
    writeln!(out, "total: {:.9}", report.total)?;
    Ok(())
}

fn cmd_offline(a: &OfflineArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let loaded = load_source(&a.source, a.alpha, a.lambda)?;
    let lambda = require_lambda(loaded.lambda)?;
    let params = CostParams::uniform(lambda, loaded.trace.n())?;
    let (cost, log) = match a.method {
        Method::Dp => {
            let sol = optimal_offline(&loaded.trace, &params)?;
            (sol.cost, Some(sol.log))
        }
        Method::Brute => {
            let sol = brute_force_optimal(&loaded.trace, &params)?;
            (sol.cost, Some(sol.log))
        }
        Method::Optl => (optl(&loaded.trace, &params), None),
    };
    if let Some(path) = &a.out {
        let log = log.ok_or_else(|| CliError::Usage("--out is only available for dp and brute".into()))?;
        write_log_csv(&log, create(path)?)?;
    }
    writeln!(out, "cost: {cost:.9}")?;
    Ok(())
}

/// One grid cell's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub policy: &'static str,
    pub alpha: f64,
    pub lambda: f64,
    pub accuracy: f64,
    pub trial: usize,
    pub outcome: Result<CellCosts, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCosts {
    pub online_cost: f64,
    /// `None` when rows are normalized by OPTL.
    pub opt_cost: Option<f64>,
    pub optl: f64,
    pub ratio: f64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let head = format!("{},{},{},{},{}", self.policy, self.alpha, self.lambda, self.accuracy, self.trial);
        match &self.outcome {
            Ok(c) => {
                let opt = c.opt_cost.map(|v| format!("{v:.9}")).unwrap_or_default();
                format!("{head},{:.9},{opt},{:.9},{:.9}", c.online_cost, c.optl, c.ratio)
            }
            Err(msg) => {
                let msg: String = msg.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
                format!("{head},,,,ERROR({msg})")
            }
        }
    }
}

/// The parameter grid of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub policies: Vec<PolicyKind>,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub beta: f64,
    pub warmup: usize,
    pub normalize: Normalize,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.policies.is_empty() || self.alphas.is_empty() || self.lambdas.is_empty() || self.accuracies.is_empty() {
            return Err(CliError::Usage("grid lists must be nonempty".into()));
        }
        if self.trials == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Cells in output order: λ, policy, α, accuracy, trial. Policies that
    /// ignore α get a single α = 1 column.
    fn cells(&self) -> Vec<(usize, PolicyKind, f64, usize, usize)> {
        let mut cells = Vec::new();
        for li in 0..self.lambdas.len() {
            for &p in &self.policies {
                let alphas: Vec<f64> = match p {
                    PolicyKind::Predictive | PolicyKind::Adaptive => {
                        self.alphas.iter().map(|&a| if a == 0.0 { ALPHA_ZERO_PROXY } else { a }).collect()
                    }
                    PolicyKind::Conventional | PolicyKind::Wang => vec![1.0],
                };
                for a in alphas {
                    for ai in 0..self.accuracies.len() {
                        for t in 0..self.trials {
                            cells.push((li, p, a, ai, t));
                        }
                    }
                }
            }
        }
        cells
    }

    fn prediction_seed(&self, accuracy_index: usize, trial: usize) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add((trial as u64) << 20)
            .wrapping_add(accuracy_index as u64)
    }
}

/// Runs every grid cell over `trace`, calling `emit` with rows in grid
/// order. Cells run in parallel, in chunks, so output streams as chunks
/// complete.
pub fn run_experiment(
    trace: &RequestTrace,
    grid: &ExperimentGrid,
    mut emit: impl FnMut(&ResultRow) -> io::Result<()>,
) -> Result<(), CliError> {
    grid.validate()?;
    let mut normalizers = Vec::with_capacity(grid.lambdas.len());
    for &lambda in &grid.lambdas {
        let params = CostParams::uniform(lambda, trace.n())?;
        let lower = optl(trace, &params);
        let opt = match grid.normalize {
            Normalize::Optl => None,
            Normalize::Dp if trace.n() > MAX_DP_SERVERS => {
                eprintln!("warning: {} servers exceed the exact optimum's limit; normalizing by OPTL", trace.n());
                None
            }
            Normalize::Dp => Some(optimal_offline_cost(trace, &params)?),
        };
        normalizers.push((params, opt, lower));
    }

    let cells = grid.cells();
    let chunk = rayon::current_num_threads().max(1) * 8;
    for batch in cells.chunks(chunk) {
        let rows: Vec<ResultRow> = batch
            .par_iter()
            .map(|&(li, kind, alpha, ai, trial)| {
                let (params, opt, lower) = &normalizers[li];
                let accuracy = grid.accuracies[ai];
                let outcome = run_cell(trace, params, kind, alpha, grid, accuracy, grid.prediction_seed(ai, trial))
                    .map(|online| {
                        let denom = opt.unwrap_or(*lower);
                        CellCosts { online_cost: online, opt_cost: *opt, optl: *lower, ratio: online / denom }
                    });
                ResultRow {
                    policy: policy_name(kind),
                    alpha,
                    lambda: params.lambda(),
                    accuracy,
                    trial,
                    outcome,
                }
            })
            .collect();
        for row in &rows {
            emit(row)?;
        }
    }
    Ok(())
}

fn policy_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Predictive => "predictive",
        PolicyKind::Conventional => "conventional",
        PolicyKind::Adaptive => "adaptive",
        PolicyKind::Wang => "wang",
    }
}

fn run_cell(
    trace: &RequestTrace,
    params: &CostParams,
    kind: PolicyKind,
    alpha: f64,
    grid: &ExperimentGrid,
    accuracy: f64,
    seed: u64,
) -> Result<f64, String> {
    let config = policy_config(kind, alpha, grid.beta, grid.warmup).map_err(|e| e.to_string())?;
    let preds = synthesize_predictions(trace, params, accuracy, seed).map_err(|e| e.to_string())?;
    let policy = config.build(params).map_err(|e| e.to_string())?;
    let (_, report) = run(trace, &preds, policy, params).map_err(|e| e.to_string())?;
    Ok(report.total)
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let trace = if let Some(input) = &a.input {
        ingest_trace(&a.ingest.config(input, a.seed, a.prefix))?
    } else {
        let loaded = load_source(&a.source, a.example_alpha, None)?;
        match a.prefix {
            Some(p) => loaded.trace.prefix(p + 1),
            None => loaded.trace,
        }
    };
    let grid = ExperimentGrid {
        policies: a.policy.clone(),
        alphas: a.alpha.clone(),
        lambdas: a.lambda.clone(),
        accuracies: a.accuracy.clone(),
        trials: a.trials,
        seed: a.seed,
        beta: a.beta,
        warmup: a.warmup,
        normalize: a.normalize,
    };
    let mut file;
    let sink: &mut dyn Write = match &a.out {
        Some(path) => {
            file = create(path)?;
            &mut file
        }
        None => out,
    };
    writeln!(sink, "{RESULT_HEADER}")?;
    run_experiment(&trace, &grid, |row| {
        writeln!(sink, "{}", row.to_csv_line())?;
        sink.flush()
    })?;
    sink.flush()?;
    Ok(())
}

fn cmd_adversary(a: &AdversaryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = CostParams::uniform(a.lambda, 2)?;
    let config = a.policy.config(a.policy.alpha)?;
    let policy = config.build(&params)?;
    let outcome = run_adversary(policy, a.lambda, a.eps, a.m)?;
    let opt = optimal_offline_cost(&outcome.trace, &params)?;
    if let Some(path) = &a.out {
        write_trace_csv(&outcome.trace, create(path)?)?;
    }
    if let Some(path) = &a.kinds_out {
        let mut w = create(path)?;
        writeln!(w, "request,kind")?;
        for (id, kind) in outcome.kinds.iter().enumerate() {
            writeln!(w, "{id},{}", kind.map(|k| k.to_string()).unwrap_or_else(|| "-".into()))?;
        }
        w.flush()?;
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for k in outcome.kinds.iter().flatten() {
        *counts.entry(k.to_string()).or_default() += 1;
    }
    writeln!(out, "policy: {}", config.name())?;
    writeln!(out, "requests: {}", outcome.trace.last_index())?;
    for (k, c) in &counts {
        writeln!(out, "{k}: {c}")?;
    }
    writeln!(out, "online_cost: {:.9}", outcome.report.total)?;
    writeln!(out, "opt_cost: {opt:.9}")?;
    writeln!(out, "ratio: {:.9}", outcome.report.total / opt)?;
    Ok(())
}

fn cmd_allocate(a: &AllocateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let alpha = match a.policy {
        PolicyKind::Predictive => a.alpha,
        PolicyKind::Conventional => 1.0,
        other => {
            return Err(CliError::Usage(format!(
                "allocation is defined for predictive and conventional runs, not {}",
                policy_name(other)
            )))
        }
    };
    let loaded = load_source(&a.source, a.alpha, a.lambda)?;
    let lambda = require_lambda(loaded.lambda)?;
    let params = CostParams::uniform(lambda, loaded.trace.n())?;
    let preds = resolve_predictions(&a.preds, &loaded, &params)?;
    let policy = policy_config(a.policy, alpha, 0.0, 0)?.build(&params)?;
    let (log, report) = run(&loaded.trace, &preds, policy, &params)?;
    let table = classify_and_allocate(&log, &loaded.trace, &preds, &params, alpha)?;
    match &a.out {
        Some(path) => table.write_csv(create(path)?)?,
        None => table.write_csv(&mut *out)?,
    }
    eprintln!("allocated {:.9} of accounted {:.9}", table.total(), report.total);
    Ok(())
}

fn cmd_ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let trace = ingest_trace(&a.ingest.config(&a.input, a.seed, a.prefix))?;
    match &a.out {
        Some(path) => write_trace_csv(&trace, create(path)?)?,
        None => write_trace_csv(&trace, &mut *out)?,
    }
    Ok(())
}

/// Writes predictions next to a trace; used by tests and scripts that
/// want file-based inputs.
pub fn write_prediction_file(preds: &PredictionStream, path: &Path) -> Result<(), CliError> {
    write_predictions_csv(preds, create(path)?)?;
    Ok(())
}
