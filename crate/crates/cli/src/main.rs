//! `sampind`: independence testing, correlation screening and simulations
//! from the command line.
//!
//! Data files are CSV with one variable per row and one sample per column.
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};

use sampind::corrtest::{self, MtcMethod, MtcOptions, TruthSet};
use sampind::indtest::{self, CriticalMode};
use sampind::io;
use sampind::quadfunc::{IidEstimate, QuadEstimates, SampleMoments, DEFAULT_DELTA};
use sampind::simharness::{self, ExperimentConfig};
use sampind::{Error, ErrorClass};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "sampind",
    version,
    about = "Test whether high-dimensional samples are independent, and screen correlations between variables when they are not"
)]
struct Cli {
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test that the samples (columns) of a data matrix are independent.
    IndTest(IndTestArgs),
    /// Multiple testing of correlations between variables (rows).
    CorrMtc(CorrMtcArgs),
    /// Estimate B_n, ||Sigma||_F^2 and A_p by adaptive thresholding.
    Estimate(EstimateArgs),
    /// Monte-Carlo critical value of the independence test.
    McCritical(McCriticalArgs),
    /// Run a simulation experiment from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// CSV data file: one variable per row, one sample per column.
    #[arg(long)]
    input: PathBuf,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Limiting,
    MonteCarlo,
}

#[derive(Args, Debug)]
struct IndTestArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Threshold constant of the A_p estimator.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Critical value from the limiting law or from null simulations.
    #[arg(long, value_enum, default_value_t = ModeArg::Limiting)]
    mode: ModeArg,
    /// Null replications for `--mode monte-carlo`.
    #[arg(long = "M", default_value_t = 2000)]
    m: usize,
    /// Seed for `--mode monte-carlo`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MethodArg {
    Sandwich,
    Naive,
    VarianceCorrected,
}

impl From<MethodArg> for MtcMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sandwich => MtcMethod::Sandwich,
            MethodArg::Naive => MtcMethod::Naive,
            MethodArg::VarianceCorrected => MtcMethod::VarianceCorrected,
        }
    }
}

#[derive(Args, Debug)]
struct CorrMtcArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Sandwich)]
    method: MethodArg,
    /// Target FDR level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed CLIME level (sandwich); tuned over the grid when absent.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated CLIME tuning grid (sandwich).
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// B_n for the variance-corrected method; estimated when absent.
    #[arg(long)]
    bn: Option<f64>,
    /// CSV of a p x p matrix whose nonzero off-diagonal entries mark the truly
    /// correlated pairs; adds FDP and power to the summary.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write per-pair statistics and decisions to this CSV.
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Also report the fixed-level threshold estimate at this level.
    #[arg(long)]
    iid_lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct McCriticalArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    /// Number of null replications.
    #[arg(long = "M")]
    m: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Every flag overrides the config key of the same name.
#[derive(Args, Debug)]
struct SimulateArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// size, power, mtc or quadfunc-error.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Generator as JSON, e.g. '{"kind":"ar","rho":0.5}', or a bare name such as band.
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    psi: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    /// limiting, or JSON such as '{"kind":"monte-carlo","m":2000,"seed":1}'.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Comma-separated: sandwich, sandwich-true, naive, variance-corrected.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    iid_lambda: Option<f64>,
    /// Write the report JSON here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write per-replication records to this CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let head = msg.split("\n\n").next().unwrap_or("usage error");
            eprintln!("{}", head.split_whitespace().collect::<Vec<_>>().join(" "));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(match e.class() {
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::IndTest(a) => ind_test(a),
        Command::CorrMtc(a) => corr_mtc(a),
        Command::Estimate(a) => estimate(a),
        Command::McCritical(a) => mc_critical(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn emit<T: Serialize>(output: Option<&Path>, body: &T) -> CliResult {
    match output {
        Some(path) => io::write_json(path, body)?,
        None => println!("{}", io::to_json_string(body)?),
    }
    Ok(())
}

fn ind_test(a: IndTestArgs) -> CliResult {
    let x = io::read_data_file(&a.io.input)?;
    let mode = match a.mode {
        ModeArg::Limiting => CriticalMode::Limiting,
        ModeArg::MonteCarlo => CriticalMode::MonteCarlo {
            m: a.m,
            seed: a.seed,
        },
    };
    let result = indtest::run_test(&x, a.alpha, &mode, a.delta)?;
    emit(a.io.output.as_deref(), &result)
}

fn corr_mtc(a: CorrMtcArgs) -> CliResult {
    let x = io::read_data_file(&a.io.input)?;
    let truth = match &a.truth {
        Some(path) => {
            let m = io::read_matrix_file(path)?;
            if m.shape() != (x.p(), x.p()) {
                return Err(Error::Data(format!(
                    "truth matrix is {:?}, expected {p}x{p}",
                    m.shape(),
                    p = x.p()
                ))
                .into());
            }
            Some(TruthSet::from_support(&m))
        }
        None => None,
    };
    let opts = MtcOptions {
        lambda: a.lambda,
        grid: a.lambda_grid,
        bn: a.bn,
        precision: None,
    };
    let result = corrtest::run_mtc(&x, a.method.into(), a.alpha, &opts, truth.as_ref())?;
    if let Some(path) = &a.pairs {
        result.write_csv_file(path)?;
    }
    emit(a.io.output.as_deref(), &result.summary())
}

#[derive(Serialize)]
struct EstimateOutput {
    #[serde(flatten)]
    estimates: QuadEstimates,
    #[serde(skip_serializing_if = "Option::is_none")]
    iid: Option<IidEstimate>,
}

fn estimate(a: EstimateArgs) -> CliResult {
    let x = io::read_data_file(&a.io.input)?;
    let (estimates, iid) = SampleMoments::new(&x).estimate_ap_with_iid(a.delta, a.iid_lambda)?;
    emit(a.io.output.as_deref(), &EstimateOutput { estimates, iid })
}

#[derive(Serialize)]
struct McCriticalOutput {
    critical_value: f64,
    n: usize,
    p: usize,
    #[serde(rename = "M")]
    m: usize,
    alpha: f64,
    seed: u64,
    delta: f64,
}

fn mc_critical(a: McCriticalArgs) -> CliResult {
    let critical_value = indtest::mc_critical_with_delta(a.n, a.p, a.m, a.alpha, a.seed, a.delta)?;
    let out = McCriticalOutput {
        critical_value,
        n: a.n,
        p: a.p,
        m: a.m,
        alpha: a.alpha,
        seed: a.seed,
        delta: a.delta,
    };
    emit(a.output.as_deref(), &out)
}

/// Parses a flag value as JSON, falling back to `{"kind": value}` for bare names.
fn spec_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::json!({ "kind": raw }))
}

fn simulate(a: SimulateArgs) -> CliResult {
    let mut cfg: Map<String, Value> = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(Error::from)?;
            match serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(e.to_string()))? {
                Value::Object(mut m) => {
                    m.remove("schema");
                    m
                }
                _ => return Err(Error::Config("config must be a JSON object".into()).into()),
            }
        }
        None => Map::new(),
    };
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            cfg.insert(key.to_string(), v);
        }
    };
    set("kind", a.kind.map(Value::from));
    set("n", a.n.map(Value::from));
    set("p", a.p.map(Value::from));
    set("sigma", a.sigma.as_deref().map(spec_value));
    set("psi", a.psi.as_deref().map(spec_value));
    set("reps", a.reps.map(Value::from));
    set("alpha", a.alpha.map(Value::from));
    set("seed", a.seed.map(Value::from));
    set("delta", a.delta.map(Value::from));
    set("mode", a.mode.as_deref().map(spec_value));
    set("lambda", a.lambda.map(Value::from));
    set("lambda_grid", a.lambda_grid.map(Value::from));
    set("methods", a.methods.map(Value::from));
    set("iid_lambda", a.iid_lambda.map(Value::from));
    let config: ExperimentConfig =
        serde_json::from_value(Value::Object(cfg)).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    let report = simharness::run(&config)?;
    if let Some(path) = &a.records {
        report.write_records_csv(std::io::BufWriter::new(
            fs::File::create(path).map_err(Error::from)?,
        ))?;
    }
    emit(a.output.as_deref(), &report)
}
