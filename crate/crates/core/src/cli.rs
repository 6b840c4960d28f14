//! Command-line front end: argument parsing, orchestration and exit codes.
//!
//! Exit codes: 0 success, 1 failed selfcheck, 2 usage error, 3 data error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Result, ScopError};
use crate::intervals::{Method, ScoreKind};
use crate::io::{self, Format};
use crate::selection::SelectionRule;
use crate::selfcheck::{self, SuiteSize};
use crate::simulate::{
    self, rep_seed, DataSource, ExperimentConfig, ExternalData, Scenario, SweepParam,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Selection-conditional conformal prediction intervals and FCR experiments.
#[derive(Parser, Debug)]
#[command(name = "scop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo experiment on a synthetic scenario
    Simulate(SimulateArgs),
    /// Experiment on user-supplied CSV files
    RunCsv(RunCsvArgs),
    /// One simulation per grid point of a quantile level or (n, m) grid
    Sweep(SweepArgs),
    /// Run the deterministic property suite
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Miscoverage level in (0, 1)
    #[arg(long, default_value_t = 0.1, value_parser = parse_alpha)]
    alpha: f64,

    /// Selection rule: t-cons:B0, t-cal:Q, t-test:Q, t-exch:Q, t-top:K,
    /// t-pos:B0,BETA or t-clu
    #[arg(long, value_parser = parse_from_str::<SelectionRule>)]
    rule: SelectionRule,

    /// Interval methods (scop, scop-plus, ocp, acp)
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<Method>, default_value = "scop,ocp,acp")]
    methods: Vec<Method>,

    /// Nonconformity score: abs or cqr
    #[arg(long, default_value = "abs", value_parser = parse_from_str::<ScoreKind>)]
    score: ScoreKind,

    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// ACP with the selected-set size in place of the exact minimum
    #[arg(long)]
    acp_simple: bool,

    /// Worker threads (default: all cores)
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[arg(long, default_value = "A", value_parser = parse_from_str::<Scenario>)]
    scenario: Scenario,

    /// Training and calibration size
    #[arg(long, default_value_t = 200)]
    n: usize,

    /// Training size (overrides --n)
    #[arg(long)]
    n_train: Option<usize>,

    /// Calibration size (overrides --n)
    #[arg(long)]
    n_cal: Option<usize>,

    /// Test size
    #[arg(long, default_value_t = 200)]
    m: usize,

    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,

    /// Scenario A: one coefficient vector shared by all repetitions
    #[arg(long)]
    fixed_beta: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    #[command(flatten)]
    common: CommonArgs,

    /// Write repetition 0's raw data and scored units into this directory
    #[arg(long, value_name = "DIR")]
    dump_units: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunCsvArgs {
    /// Labeled file (y,x1..xd), or y,mu_hat,t_score with --precomputed
    #[arg(long)]
    labeled: PathBuf,

    /// Test file (x1..xd with optional leading y), or [y,]mu_hat,t_score
    #[arg(long)]
    test: PathBuf,

    /// Inputs hold predictions and selection scores instead of features
    #[arg(long)]
    precomputed: bool,

    /// Split the labeled rows in file order instead of shuffling
    #[arg(long)]
    no_shuffle: bool,

    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
#[group(id = "grid", required = true, multiple = false, args = ["q", "nm"])]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    #[command(flatten)]
    common: CommonArgs,

    /// Quantile levels for t-cal, t-test or t-exch
    #[arg(long, value_delimiter = ',')]
    q: Vec<f64>,

    /// Sample sizes as NxM pairs, e.g. 100x100,200x200
    #[arg(long, value_delimiter = ',', value_parser = parse_nm)]
    nm: Vec<(usize, usize)>,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_from_str<T: FromStr<Err = ScopError>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: ScopError| match e {
        ScopError::Parameter(why) => why,
        other => other.to_string(),
    })
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {s}"))
    }
}

fn parse_nm(s: &str) -> std::result::Result<(usize, usize), String> {
    let err = || format!("'{s}' is not of the form NxM");
    let (n, m) = s.split_once('x').ok_or_else(err)?;
    Ok((n.parse().map_err(|_| err())?, m.parse().map_err(|_| err())?))
}

/// What an invocation runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Simulate { dump_units: Option<PathBuf> },
    RunCsv {
        labeled: PathBuf,
        test: PathBuf,
        precomputed: bool,
    },
    Sweep(SweepParam),
}

/// A validated experiment invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub mode: Mode,
    /// For `run-csv` the sizes are filled in once the files are loaded.
    pub config: ExperimentConfig,
    pub threads: Option<usize>,
    pub format: Format,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Run(Box<RunSpec>),
    Selfcheck { seed: u64 },
}

/// Parse failures carry clap's rendered message and exit code.
#[derive(Debug)]
pub struct UsageError {
    pub message: String,
    pub code: i32,
}

fn usage(message: impl Into<String>) -> UsageError {
    UsageError {
        message: message.into(),
        code: EXIT_USAGE,
    }
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<Invocation, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| UsageError {
        message: e.render().to_string(),
        code: if e.use_stderr() { EXIT_USAGE } else { EXIT_OK },
    })?;
    let spec = match cli.command {
        Command::Selfcheck(a) => return Ok(Invocation::Selfcheck { seed: a.seed }),
        Command::Simulate(a) => spec_from(
            Mode::Simulate {
                dump_units: a.dump_units,
            },
            scenario_config(&a.scenario, &a.common),
            a.common,
        ),
        Command::Sweep(a) => {
            let param = if a.q.is_empty() {
                SweepParam::Sizes(a.nm)
            } else {
                if a.common.rule.with_quantile(50.0).is_none() {
                    return Err(usage(format!("--q: rule {} has no quantile level", a.common.rule)));
                }
                SweepParam::Quantile(a.q)
            };
            spec_from(Mode::Sweep(param), scenario_config(&a.scenario, &a.common), a.common)
        }
        Command::RunCsv(a) => {
            if a.precomputed && a.reps > 1 {
                return Err(usage("--reps: precomputed inputs are deterministic; use a single repetition"));
            }
            if a.precomputed && a.common.score == ScoreKind::Cqr {
                return Err(usage("--score: cqr needs features and is unavailable with --precomputed"));
            }
            let config = ExperimentConfig {
                data: DataSource::External {
                    labeled: a.labeled.display().to_string(),
                    test: a.test.display().to_string(),
                    precomputed: a.precomputed,
                    shuffle: !a.no_shuffle,
                },
                reps: a.reps as usize,
                n_train: 0,
                n_cal: 0,
                m: 0,
                ..base_config(&a.common)
            };
            spec_from(
                Mode::RunCsv {
                    labeled: a.labeled,
                    test: a.test,
                    precomputed: a.precomputed,
                },
                config,
                a.common,
            )
        }
    };
    if !matches!(spec.mode, Mode::RunCsv { .. }) {
        spec.config.validate().map_err(|e| usage(e.to_string()))?;
    }
    Ok(Invocation::Run(Box::new(spec)))
}

fn base_config(c: &CommonArgs) -> ExperimentConfig {
    ExperimentConfig {
        alpha: c.alpha,
        methods: c.methods.clone(),
        score_kind: c.score,
        master_seed: c.seed,
        acp_simple: c.acp_simple,
        ..ExperimentConfig::simulation(Scenario::A, c.rule)
    }
}

fn scenario_config(s: &ScenarioArgs, c: &CommonArgs) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Scenario(s.scenario),
        n_train: s.n_train.unwrap_or(s.n),
        n_cal: s.n_cal.unwrap_or(s.n),
        m: s.m,
        reps: s.reps as usize,
        fixed_beta: s.fixed_beta,
        ..base_config(c)
    }
}

fn spec_from(mode: Mode, config: ExperimentConfig, c: CommonArgs) -> RunSpec {
    RunSpec {
        mode,
        config,
        threads: c.threads.map(|t| t as usize),
        format: c.format,
        out: c.out,
    }
}

/// Fails early when the output file cannot be opened for writing. An
/// existing file is left untouched until the results are ready.
fn check_writable(path: &Path) -> Result<()> {
    OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map(drop)
        .map_err(|source| ScopError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn external_sizes(config: &mut ExperimentConfig, data: &ExternalData) {
    match data {
        ExternalData::Raw { labeled, test } => {
            config.n_train = labeled.len() / 2;
            config.n_cal = labeled.len() - config.n_train;
            config.m = test.len();
        }
        ExternalData::Precomputed { cal, test } => {
            config.n_train = 0;
            config.n_cal = cal.len();
            config.m = test.len();
        }
    }
}

fn test_is_labeled(data: &ExternalData) -> bool {
    match data {
        ExternalData::Raw { test, .. } => test.is_labeled(),
        ExternalData::Precomputed { test, .. } => test.iter().all(|u| u.response.is_some()),
    }
}

/// Runs an experiment invocation and returns the serialized output.
pub fn run(spec: &RunSpec) -> Result<Vec<u8>> {
    if let Some(out) = &spec.out {
        check_writable(out)?;
    }
    let mut buf = Vec::new();
    match &spec.mode {
        Mode::Simulate { dump_units } => {
            if let Some(dir) = dump_units {
                let (train, cal, test) = simulate::simulated_data(&spec.config, 0)?;
                io::dump_datasets(dir, &train, &cal, &test)?;
                let c = &spec.config;
                io::dump_units(dir, &simulate::prepare(&train, &cal, &test, &c.rule, c.score_kind, c.alpha)?)?;
            }
            io::write_result(&mut buf, &simulate::run_experiment(&spec.config)?, spec.format)?;
        }
        Mode::Sweep(param) => {
            io::write_sweep(&mut buf, &simulate::sweep(&spec.config, param)?, spec.format)?;
        }
        Mode::RunCsv {
            labeled,
            test,
            precomputed,
        } => {
            let data = io::load_csv(labeled, test, *precomputed)?;
            let mut config = spec.config.clone();
            external_sizes(&mut config, &data);
            config.validate()?;
            if test_is_labeled(&data) {
                io::write_result(&mut buf, &simulate::run_external(&config, &data)?, spec.format)?;
            } else {
                let prepared = simulate::prepare_external(&data, &config, rep_seed(config.master_seed, 0))?;
                let built = simulate::build_intervals(&prepared, &config)?;
                let all: Vec<_> = built.intervals.into_iter().flat_map(|(_, iv)| iv).collect();
                io::write_intervals(&mut buf, &all, spec.format)?;
            }
        }
    }
    Ok(buf)
}

pub fn exit_code(e: &ScopError) -> i32 {
    match e {
        ScopError::Parameter(_) => EXIT_USAGE,
        ScopError::NumericalFailure { .. } => EXIT_NUMERICAL,
        ScopError::Domain(_)
        | ScopError::Range { .. }
        | ScopError::NoNullCalibration { .. }
        | ScopError::Io { .. }
        | ScopError::Csv { .. }
        | ScopError::Data { .. } => EXIT_DATA,
    }
}

fn use_color() -> bool {
    std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stdout().is_terminal()
}

fn run_selfcheck(seed: u64) -> i32 {
    let color = use_color();
    let reports = selfcheck::run_all(seed, SuiteSize::default());
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        let tag = match (r.passed(), color) {
            (true, true) => "\x1b[32mPASS\x1b[0m",
            (false, true) => "\x1b[31mFAIL\x1b[0m",
            (true, false) => "PASS",
            (false, false) => "FAIL",
        };
        let _ = writeln!(stdout, "{tag} {} ({} cases, {} failures)", r.name, r.cases, r.failures);
        if let Some(f) = &r.first_failure {
            let _ = writeln!(stdout, "     first failure: {f}");
        }
    }
    if reports.iter().all(|r| r.passed()) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

fn execute(spec: &RunSpec) -> Result<Vec<u8>> {
    match spec.threads {
        None => run(spec),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ScopError::Parameter(format!("--threads: {e}")))?
            .install(|| run(spec)),
    }
}

fn emit(spec: &RunSpec, bytes: &[u8]) -> Result<()> {
    match &spec.out {
        Some(path) => std::fs::write(path, bytes).map_err(|source| ScopError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(bytes).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(ScopError::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let spec = match parse_args(argv) {
        Ok(Invocation::Run(spec)) => spec,
        Ok(Invocation::Selfcheck { seed }) => return run_selfcheck(seed),
        Err(e) => {
            if e.code == EXIT_OK {
                print!("{}", e.message);
            } else {
                eprint!("{}", e.message);
                if !e.message.ends_with('\n') {
                    eprintln!();
                }
            }
            return e.code;
        }
    };
    match execute(&spec).and_then(|bytes| emit(&spec, &bytes)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
