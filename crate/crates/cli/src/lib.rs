//! Command-line pipelines: simulate → test → aggregate, plus the exact oracle.
//!
//! Exit codes: 0 success, 1 data or I/O error, 2 usage error.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use qrng_audit::aggregate::{build_matrix, build_report, write_report, write_scatter, AggregateReport, PValueMatrix};
use qrng_audit::ingest::{
    self, parse_calibration, parse_jobs, parse_matrix_rows, read_jobs_packed, serialize_calibration,
    serialize_jobs, serialize_matrix_rows, write_jobs_packed, CalibrationRecord, JobParseOptions, JobRecord,
};
use qrng_audit::oracle::{approximation_error, ENUMERATION_LIMIT};
use qrng_audit::simulate::{
    self, generate_device_run, BiasSchedule, CalibrationConfig, DeviceRun, DeviceRunConfig, QubitModel,
    QubitPhysicalParams, SourceModel,
};
use qrng_audit::{BiasMode, TestParams};

/// Environment variable capping worker threads (0 = automatic).
pub const THREADS_ENV: &str = "QRNG_AUDIT_THREADS";

/// Exact p-value band reported separately by `oracle`.
pub const CRITICAL_REGION: (f64, f64) = (0.005, 0.05);

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn usage(e: qrng_audit::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "qrng-audit", version, about = "Autocorrelation audit of QRNG bitstreams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic device run.
    Simulate(SimulateArgs),
    /// Run the autocorrelation test on every stream of a job file.
    Test(TestArgs),
    /// Summarise a p-value matrix per qubit and across the fleet.
    Aggregate(AggregateArgs),
    /// Tabulate exact against normal-approximation p-values.
    Oracle(OracleArgs),
    /// simulate, test and aggregate in one go.
    Pipeline(PipelineArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// i.i.d. bits with bias --p.
    Ideal,
    /// Markov chain with bias --p and lag-1 correlation --rho.
    Markov,
    /// i.i.d. bits whose bias steps through --drift over the jobs.
    Drifting,
    /// Markov chain with rho = coupling * exp(-t_wait / T1).
    Physical,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, default_value_t = simulate::DEFAULT_QUBITS)]
    pub qubits: usize,
    #[arg(long, default_value_t = simulate::DEFAULT_JOBS)]
    pub jobs: usize,
    #[arg(long, default_value_t = simulate::DEFAULT_BITS_PER_JOB)]
    pub bits: usize,
    #[arg(long, value_enum, default_value_t = ModelKind::Ideal)]
    pub model: ModelKind,
    /// Bias P(1).
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rho: f64,
    /// Comma-separated biases, one per equal-length phase of the run.
    #[arg(long, value_delimiter = ',', default_value = "0.45,0.55")]
    pub drift: Vec<f64>,
    /// Mean relaxation time; per-qubit values scatter around it.
    #[arg(long, default_value_t = 70.0)]
    pub t1_us: f64,
    /// Relative spread of T1 across qubits and between calibrations.
    #[arg(long, default_value_t = 0.2)]
    pub t1_spread: f64,
    #[arg(long, default_value_t = simulate::DEFAULT_T_WAIT_US)]
    pub t_wait_us: f64,
    #[arg(long, default_value_t = 1.0)]
    pub coupling: f64,
    /// Jobs between calibration snapshots.
    #[arg(long, default_value_t = 50)]
    pub calibration_every: usize,
    #[arg(long, default_value_t = simulate::DEFAULT_JOB_INTERVAL_SECS)]
    pub job_interval_secs: i64,
    /// Timestamp of the first job (ISO 8601, UTC).
    #[arg(long, default_value = "2019-05-09T11:24:27Z")]
    pub start: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Job file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a drifting T1 calibration series here.
    #[arg(long)]
    pub calibration_out: Option<PathBuf>,
    /// Write the packed binary job format instead of CSV.
    #[arg(long)]
    pub packed: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TestFlags {
    #[arg(long, default_value_t = 1)]
    pub lag: usize,
    #[arg(long, default_value_t = qrng_audit::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// `estimated` or `fixed:<p>`.
    #[arg(long, default_value = "estimated")]
    pub bias: String,
}

impl TestFlags {
    fn params(&self) -> CliResult<TestParams> {
        let bias: BiasMode = self.bias.parse().map_err(usage)?;
        TestParams::new(self.lag, self.alpha, bias).map_err(usage)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TestArgs {
    /// Job file (CSV or packed).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// P-value matrix file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Required bits per stream; inferred when omitted.
    #[arg(long)]
    pub bits: Option<usize>,
    #[command(flatten)]
    pub test: TestFlags,
}

#[derive(Args, Debug, Clone)]
pub struct AggregateArgs {
    /// P-value matrix file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, default_value_t = qrng_audit::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub report: PathBuf,
    /// Scatter file of mean T1 against failure ratio; needs --calibration.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub lag: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long)]
    pub k_min: Option<u64>,
    #[arg(long)]
    pub k_max: Option<u64>,
    /// Table destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub test: TestFlags,
    /// Directory for jobs.csv, calibration.csv, matrix.csv, report.csv, scatter.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub const PIPELINE_FILES: [&str; 5] = ["jobs.csv", "calibration.csv", "matrix.csv", "report.csv", "scatter.csv"];

impl RunArgs {
    pub fn config(&self) -> CliResult<DeviceRunConfig> {
        let start: DateTime<Utc> = ingest::parse_timestamp(&self.start)
            .map_err(|e| CliError::Usage(format!("--start: {e}")))?;
        if self.qubits == 0 || self.jobs == 0 || self.bits == 0 {
            return Err(CliError::Usage("--qubits, --jobs and --bits must be at least 1".into()));
        }
        if self.job_interval_secs < 0 {
            return Err(CliError::Usage("--job-interval-secs must be non-negative".into()));
        }
        if !(self.t1_us > 0.0) {
            return Err(CliError::Usage(format!("--t1-us {} must be positive", self.t1_us)));
        }
        let calibration = CalibrationConfig::scattered(
            self.qubits,
            self.t1_us,
            self.t1_spread,
            self.calibration_every,
            self.seed,
        );
        let models = (0..self.qubits)
            .map(|q| {
                Ok(match self.model {
                    ModelKind::Ideal => QubitModel::Source(SourceModel::Ideal { bias: self.p }),
                    ModelKind::Markov => QubitModel::Source(SourceModel::Markov { bias: self.p, rho: self.rho }),
                    ModelKind::Drifting => QubitModel::Source(SourceModel::Drifting {
                        schedule: BiasSchedule::equal_phases(&self.drift, self.jobs).map_err(usage)?,
                    }),
                    ModelKind::Physical => QubitModel::Physical {
                        params: QubitPhysicalParams {
                            qubit_id: q as u32,
                            t1_us: calibration.base_t1_us[q],
                            t_wait_us: self.t_wait_us,
                            coupling: self.coupling,
                        },
                        bias: self.p,
                    },
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let config = DeviceRunConfig {
            jobs: self.jobs,
            bits_per_job: self.bits,
            models,
            master_seed: self.seed,
            start,
            job_interval: TimeDelta::seconds(self.job_interval_secs),
            calibration: Some(calibration),
        };
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn simulate_run(args: &RunArgs) -> CliResult<DeviceRun> {
    let config = args.config()?;
    generate_device_run(&config).map_err(|e| CliError::Data(e.to_string()))
}

fn read_jobs(path: &Path, bits: Option<usize>) -> CliResult<Vec<JobRecord>> {
    let mut raw = Vec::new();
    open(path)?.read_to_end(&mut raw).map_err(io_err(path))?;
    if raw.starts_with(b"QRNGJOB1") {
        read_jobs_packed(&raw[..]).map_err(|e| data(path, e))
    } else {
        parse_jobs(&raw[..], JobParseOptions { bits_per_job: bits }).map_err(|e| data(path, e))
    }
}

fn read_calibration(path: &Path, err: &mut (dyn Write + Send)) -> CliResult<Vec<CalibrationRecord>> {
    let file = parse_calibration(open(path)?).map_err(|e| data(path, e))?;
    if file.duplicates > 0 {
        let _ = writeln!(err, "warning: {} duplicate calibration rows, last value kept", file.duplicates);
    }
    Ok(file.records)
}

fn test_jobs(jobs: &[JobRecord], params: &TestParams) -> CliResult<PValueMatrix> {
    build_matrix(jobs, params).map_err(|e| CliError::Data(e.to_string()))
}

fn print_report(report: &AggregateReport, out: &mut (dyn Write + Send)) -> io::Result<()> {
    writeln!(out, "jobs: {}", report.jobs)?;
    writeln!(out, "qubits: {}", report.qubits.len())?;
    writeln!(out, "simultaneous_pass_proportion: {}", report.simultaneous_pass_proportion)?;
    match report.spearman_t1_failure {
        Some(rho) => writeln!(out, "spearman_t1_failure: {rho}"),
        None => writeln!(
            out,
            "spearman_t1_failure: n/a ({})",
            report.spearman_unavailable.as_deref().unwrap_or("unavailable")
        ),
    }
}

fn cmd_simulate(args: &SimulateArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let run = simulate_run(&args.run)?;
    if args.packed {
        write_with(&args.out, |w| write_jobs_packed(&run.jobs, w))?;
    } else {
        write_with(&args.out, |w| serialize_jobs(&run.jobs, w))?;
    }
    if let Some(path) = &args.calibration_out {
        write_with(path, |w| serialize_calibration(&run.calibration, w))?;
    }
    let r = &args.run;
    let _ = writeln!(
        out,
        "simulated jobs={} qubits={} bits={} model={:?} seed={} rows={}",
        r.jobs,
        r.qubits,
        r.bits,
        r.model,
        r.seed,
        r.jobs * r.qubits
    );
    Ok(())
}

fn cmd_test(args: &TestArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let params = args.test.params()?;
    let jobs = read_jobs(&args.input, args.bits)?;
    let matrix = test_jobs(&jobs, &params)?;
    write_with(&args.out, |w| serialize_matrix_rows(&matrix.to_rows(), w))?;
    let cells = matrix.rows().iter().flatten();
    let (mut fail, mut degenerate, mut total) = (0, 0, 0);
    for c in cells {
        total += 1;
        match c.verdict {
            qrng_audit::Verdict::Fail => fail += 1,
            qrng_audit::Verdict::Degenerate => degenerate += 1,
            qrng_audit::Verdict::Pass => {}
        }
    }
    let _ = writeln!(out, "tested cells={total} fail={fail} degenerate={degenerate}");
    Ok(())
}

fn cmd_aggregate(args: &AggregateArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha {} is outside (0, 1)", args.alpha)));
    }
    let rows = parse_matrix_rows(open(&args.input)?).map_err(|e| data(&args.input, e))?;
    let matrix = PValueMatrix::from_rows(rows).map_err(|e| data(&args.input, e))?;
    let calibration = match &args.calibration {
        Some(path) => Some(read_calibration(path, err)?),
        None => {
            let _ = writeln!(err, "notice: no calibration file, T1 fields omitted");
            None
        }
    };
    let report = build_report(&matrix, calibration.as_deref(), args.alpha).map_err(|e| data(&args.input, e))?;
    write_with(&args.report, |w| write_report(&report, w))?;
    match (&args.scatter, report.has_calibration) {
        (Some(path), true) => write_with(path, |w| write_scatter(&report, w))?,
        (Some(_), false) => {
            let _ = writeln!(err, "notice: scatter file needs --calibration, not written");
        }
        _ => {}
    }
    print_report(&report, out).map_err(io_err(Path::new("<stdout>")))
}

fn cmd_oracle(args: &OracleArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<()> {
    if args.n > ENUMERATION_LIMIT && args.p != 0.5 {
        return Err(CliError::Usage(format!(
            "exact distribution for p != 0.5 needs n <= {ENUMERATION_LIMIT}, got n = {}",
            args.n
        )));
    }
    if args.lag == 0 || args.lag >= args.n {
        return Err(CliError::Usage(format!("--lag {} invalid for --n {}", args.lag, args.n)));
    }
    let max = (args.n - args.lag) as u64;
    let range = match (args.k_min, args.k_max) {
        (None, None) => None,
        (lo, hi) => Some(lo.unwrap_or(0)..=hi.unwrap_or(max)),
    };
    let table = approximation_error(args.n, args.lag, args.p, range).map_err(usage)?;

    let write_table = |w: &mut (dyn Write + Send)| -> io::Result<()> {
        writeln!(w, "k,exact_p,approx_p,difference")?;
        for r in &table.rows {
            writeln!(w, "{},{},{},{}", r.k, r.exact, r.approx, r.difference)?;
        }
        w.flush()
    };
    match &args.out {
        Some(path) => write_with(path, |w| write_table(w))?,
        None => write_table(out).map_err(io_err(Path::new("<stdout>")))?,
    }
    let summary = |w: &mut (dyn Write + Send)| -> io::Result<()> {
        writeln!(w, "max_abs_difference: {}", table.max_abs_difference())?;
        let (lo, hi) = CRITICAL_REGION;
        match table.max_abs_difference_where_exact_in(lo, hi) {
            Some(d) => writeln!(w, "critical_region_max_abs_difference (exact p in [{lo}, {hi}]): {d}"),
            None => writeln!(w, "critical_region_max_abs_difference (exact p in [{lo}, {hi}]): n/a"),
        }
    };
    // Keep stdout a clean CSV when the table goes there.
    let result = if args.out.is_some() { summary(out) } else { summary(err) };
    result.map_err(io_err(Path::new("<stdout>")))
}

fn cmd_pipeline(args: &PipelineArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let params = args.test.params()?;
    let run = simulate_run(&args.run)?;
    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let path = |name: &str| args.out_dir.join(name);

    write_with(&path("jobs.csv"), |w| serialize_jobs(&run.jobs, w))?;
    write_with(&path("calibration.csv"), |w| serialize_calibration(&run.calibration, w))?;
    let matrix = test_jobs(&run.jobs, &params)?;
    write_with(&path("matrix.csv"), |w| serialize_matrix_rows(&matrix.to_rows(), w))?;
    let report = build_report(&matrix, Some(&run.calibration), params.alpha())
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_with(&path("report.csv"), |w| write_report(&report, w))?;
    write_with(&path("scatter.csv"), |w| write_scatter(&report, w))?;
    print_report(&report, out).map_err(io_err(Path::new("<stdout>")))
}

/// Worker count from [`THREADS_ENV`]; `None` means automatic.
pub fn thread_limit() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::Usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        },
    }
}

pub fn execute(cli: &Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Data(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Test(a) => cmd_test(a, out),
        Command::Aggregate(a) => cmd_aggregate(a, out, err),
        Command::Oracle(a) => cmd_oracle(a, out, err),
        Command::Pipeline(a) => cmd_pipeline(a, out),
    })
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
            } else {
                let _ = write!(err, "{}", e.render());
            }
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
