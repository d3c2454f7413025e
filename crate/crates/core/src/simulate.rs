//! Synthetic per-qubit bitstreams.
//!
//! Three source families stand in for device output: i.i.d. Bernoulli bits
//! ([`ideal_source`]), a two-state Markov chain in the measured bit
//! ([`markov_source`]), and independent bits whose bias follows a
//! piecewise-constant schedule ([`drifting_source`]).
//!
//! Every stream is drawn from its own ChaCha8 generator, seeded by
//! [`stream_seed`] from `(master_seed, job, qubit)`. Any single stream can be
//! regenerated on its own and a run is identical at every thread count.

use chrono::{DateTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bits::{BitSequence, BitSequenceBuilder};
use crate::ingest::{CalibrationRecord, JobRecord};
use crate::{Error, Result};

/// Circuit repetition period at the usual 1 kHz rate, in microseconds.
pub const REPETITION_PERIOD_US: f64 = 1_000.0;
/// Calibration circuits run between executions, in microseconds.
pub const CALIBRATION_OVERHEAD_US: f64 = 4_000.0;
/// Default idle time before the next circuit, in microseconds.
pub const DEFAULT_T_WAIT_US: f64 = REPETITION_PERIOD_US;

pub const DEFAULT_QUBITS: usize = 20;
pub const DEFAULT_JOBS: usize = 579;
pub const DEFAULT_BITS_PER_JOB: usize = 8192;
/// Start of the default run, 2019-05-09T11:24:27Z.
pub const DEFAULT_START_UNIX: i64 = 1_557_401_067;
/// Spacing that spreads 579 jobs over the span ending 2019-05-12T23:24:58Z.
pub const DEFAULT_JOB_INTERVAL_SECS: i64 = 523;

const STREAM_DOMAIN: u64 = 0x5354_5245_414d_0001;
const CALIBRATION_DOMAIN: u64 = 0x4341_4c49_4252_0002;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of words into one seed with SplitMix64 rounds:
/// `h_0 = splitmix64(w_0)`, `h_i = splitmix64(h_{i-1} ^ w_i)`.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut iter = words.iter();
    let mut h = splitmix64(iter.next().copied().unwrap_or(0));
    for &w in iter {
        h = splitmix64(h ^ w);
    }
    h
}

/// Seed of the bit stream for `(job, qubit)` in a run.
pub fn stream_seed(master_seed: u64, job: u64, qubit: u64) -> u64 {
    mix_seed(&[master_seed, STREAM_DOMAIN, job, qubit])
}

fn calibration_seed(master_seed: u64, index: u64, qubit: u64) -> u64 {
    mix_seed(&[master_seed, CALIBRATION_DOMAIN, index, qubit])
}

fn check_bias(bias: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&bias) {
        return Err(Error::InvalidParameter(format!("bias {bias} is outside [0, 1]")));
    }
    Ok(())
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

#[inline]
fn draw(rng: &mut ChaCha8Rng, prob_one: f64) -> bool {
    rng.random::<f64>() < prob_one
}

/// `n` i.i.d. Bernoulli(`bias`) bits.
pub fn ideal_source(bias: f64, n: usize, seed: u64) -> Result<BitSequence> {
    check_bias(bias)?;
    check_len(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BitSequenceBuilder::with_capacity(n);
    for _ in 0..n {
        out.push(draw(&mut rng, bias));
    }
    out.finish()
}

/// Checks that `(bias, rho)` gives transition probabilities inside `[0, 1]`
/// with `rho < 1`.
pub fn check_markov(bias: f64, rho: f64) -> Result<()> {
    check_bias(bias)?;
    if !rho.is_finite() || rho >= 1.0 {
        return Err(Error::InvalidParameter(format!("rho {rho} must be below 1")));
    }
    if bias > 0.0 && bias < 1.0 {
        let floor = -(bias / (1.0 - bias)).min((1.0 - bias) / bias);
        if rho <= floor {
            return Err(Error::InvalidParameter(format!(
                "rho {rho} must exceed {floor} for bias {bias}"
            )));
        }
    } else if rho < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rho {rho} must be non-negative for bias {bias}"
        )));
    }
    Ok(())
}

/// Stationary two-state Markov chain with marginal `bias` and lag-1
/// autocorrelation `rho`.
///
/// The first bit is Bernoulli(`bias`); afterwards
/// `P(1 | 1) = bias + rho (1 - bias)` and `P(1 | 0) = bias (1 - rho)`.
/// With `rho = 0` this draws exactly the same bits as [`ideal_source`] for
/// the same seed.
pub fn markov_source(bias: f64, rho: f64, n: usize, seed: u64) -> Result<BitSequence> {
    check_markov(bias, rho)?;
    check_len(n)?;
    let after_one = bias + rho * (1.0 - bias);
    let after_zero = bias * (1.0 - rho);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BitSequenceBuilder::with_capacity(n);
    let mut prev = draw(&mut rng, bias);
    out.push(prev);
    for _ in 1..n {
        prev = draw(&mut rng, if prev { after_one } else { after_zero });
        out.push(prev);
    }
    out.finish()
}

/// Physical description of one qubit's reset-by-waiting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitPhysicalParams {
    pub qubit_id: u32,
    /// Relaxation time, microseconds.
    pub t1_us: f64,
    /// Idle time between circuits, microseconds.
    pub t_wait_us: f64,
    /// Fraction of surviving excitation that shows up as bit correlation.
    pub coupling: f64,
}

impl QubitPhysicalParams {
    pub fn new(qubit_id: u32, t1_us: f64) -> Self {
        QubitPhysicalParams {
            qubit_id,
            t1_us,
            t_wait_us: DEFAULT_T_WAIT_US,
            coupling: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1_us > 0.0 && self.t1_us.is_finite()) {
            return Err(Error::InvalidParameter(format!("t1_us {} must be positive", self.t1_us)));
        }
        if !(self.t_wait_us >= 0.0 && self.t_wait_us.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_wait_us {} must be non-negative",
                self.t_wait_us
            )));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidParameter(format!(
                "coupling {} is outside [0, 1]",
                self.coupling
            )));
        }
        Ok(())
    }
}

/// Lag-1 correlation left after waiting `t_wait`:
/// `rho = coupling * exp(-t_wait / T1)`.
pub fn reset_rho(params: &QubitPhysicalParams) -> Result<f64> {
    params.validate()?;
    Ok(params.coupling * (-params.t_wait_us / params.t1_us).exp())
}

/// A half-open index range `[start, end)` with constant bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSegment {
    pub start: usize,
    pub end: usize,
    pub bias: f64,
}

/// Piecewise-constant bias over `0..len`, with contiguous segments.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSchedule {
    segments: Vec<ScheduleSegment>,
}

impl BiasSchedule {
    pub fn new(segments: Vec<ScheduleSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidSchedule("schedule has no segments".into()));
        }
        let mut expected = 0;
        for s in &segments {
            if s.start != expected {
                return Err(Error::InvalidSchedule(format!(
                    "segment starts at {} but the previous one ended at {expected}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::InvalidSchedule(format!("empty segment at {}", s.start)));
            }
            if !(0.0..=1.0).contains(&s.bias) {
                return Err(Error::InvalidSchedule(format!("bias {} is outside [0, 1]", s.bias)));
            }
            expected = s.end;
        }
        Ok(BiasSchedule { segments })
    }

    pub fn constant(bias: f64, len: usize) -> Result<Self> {
        Self::new(vec![ScheduleSegment { start: 0, end: len, bias }])
    }

    /// Splits `0..len` into `biases.len()` nearly equal consecutive phases.
    pub fn equal_phases(biases: &[f64], len: usize) -> Result<Self> {
        if biases.is_empty() || len < biases.len() {
            return Err(Error::InvalidSchedule(format!(
                "cannot split {len} indices into {} phases",
                biases.len()
            )));
        }
        let k = biases.len();
        let segments = biases
            .iter()
            .enumerate()
            .map(|(i, &bias)| ScheduleSegment {
                start: i * len / k,
                end: (i + 1) * len / k,
                bias,
            })
            .collect();
        Self::new(segments)
    }

    /// Number of indices covered.
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> &[ScheduleSegment] {
        &self.segments
    }

    pub fn bias_at(&self, index: usize) -> Option<f64> {
        let pos = self.segments.partition_point(|s| s.end <= index);
        self.segments.get(pos).map(|s| s.bias)
    }

    /// Index-weighted mean bias.
    pub fn average(&self) -> f64 {
        let total: f64 = self
            .segments
            .iter()
            .map(|s| s.bias * (s.end - s.start) as f64)
            .sum();
        total / self.len() as f64
    }

    fn require_cover(&self, n: usize) -> Result<()> {
        if self.len() < n {
            return Err(Error::InvalidSchedule(format!(
                "schedule covers {} indices, {n} needed",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Independent bits where bit `i` has bias `schedule.bias_at(i)`.
pub fn drifting_source(schedule: &BiasSchedule, n: usize, seed: u64) -> Result<BitSequence> {
    check_len(n)?;
    schedule.require_cover(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BitSequenceBuilder::with_capacity(n);
    for seg in schedule.segments() {
        for _ in seg.start..seg.end.min(n) {
            out.push(draw(&mut rng, seg.bias));
        }
        if seg.end >= n {
            break;
        }
    }
    out.finish()
}

/// Bit source for one qubit across the run.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceModel {
    Ideal { bias: f64 },
    Markov { bias: f64, rho: f64 },
    /// Per-job bias; bits within a job are i.i.d.
    Drifting { schedule: BiasSchedule },
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceModel::Ideal { bias } => check_bias(*bias),
            SourceModel::Markov { bias, rho } => check_markov(*bias, *rho),
            SourceModel::Drifting { .. } => Ok(()),
        }
    }
}

/// How a qubit's stream is produced in a device run.
#[derive(Debug, Clone, PartialEq)]
pub enum QubitModel {
    Source(SourceModel),
    /// Markov chain with `rho` from [`reset_rho`].
    Physical { params: QubitPhysicalParams, bias: f64 },
}

impl QubitModel {
    fn validate(&self, jobs: usize) -> Result<()> {
        match self {
            QubitModel::Source(SourceModel::Drifting { schedule }) => schedule.require_cover(jobs),
            QubitModel::Source(model) => model.validate(),
            QubitModel::Physical { params, bias } => check_markov(*bias, reset_rho(params)?),
        }
    }

    fn generate(&self, job: usize, n: usize, seed: u64) -> Result<BitSequence> {
        match self {
            QubitModel::Source(SourceModel::Ideal { bias }) => ideal_source(*bias, n, seed),
            QubitModel::Source(SourceModel::Markov { bias, rho }) => markov_source(*bias, *rho, n, seed),
            QubitModel::Source(SourceModel::Drifting { schedule }) => {
                let bias = schedule
                    .bias_at(job)
                    .ok_or_else(|| Error::InvalidSchedule(format!("no bias for job {job}")))?;
                ideal_source(bias, n, seed)
            }
            QubitModel::Physical { params, bias } => markov_source(*bias, reset_rho(params)?, n, seed),
        }
    }
}

/// Drifting T1 series emitted alongside a run.
///
/// A calibration is taken at the timestamp of every `every_jobs`-th job;
/// each value is `base_t1_us[q] * (1 + spread * u)` with `u` uniform on
/// `[-1, 1)` from a seeded per-(calibration, qubit) stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub base_t1_us: Vec<f64>,
    pub spread: f64,
    pub every_jobs: usize,
}

impl CalibrationConfig {
    /// Per-qubit base T1 values drawn uniformly from
    /// `mean_t1_us * [1 - spread, 1 + spread)`.
    pub fn scattered(qubits: usize, mean_t1_us: f64, spread: f64, every_jobs: usize, seed: u64) -> Self {
        let base_t1_us = (0..qubits as u64)
            .map(|q| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, CALIBRATION_DOMAIN, u64::MAX, q]));
                mean_t1_us * (1.0 + spread * (2.0 * rng.random::<f64>() - 1.0))
            })
            .collect();
        CalibrationConfig { base_t1_us, spread, every_jobs }
    }

    fn validate(&self, qubits: usize) -> Result<()> {
        if self.base_t1_us.len() != qubits {
            return Err(Error::InvalidParameter(format!(
                "{} base T1 values for {qubits} qubits",
                self.base_t1_us.len()
            )));
        }
        if self.base_t1_us.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("base T1 values must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.spread) {
            return Err(Error::InvalidParameter(format!("spread {} is outside [0, 1)", self.spread)));
        }
        if self.every_jobs == 0 {
            return Err(Error::InvalidParameter("calibration interval must be at least one job".into()));
        }
        Ok(())
    }
}

/// Shape and models of a simulated device run.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRunConfig {
    pub jobs: usize,
    pub bits_per_job: usize,
    /// One model per qubit; qubit ids are `0..models.len()`.
    pub models: Vec<QubitModel>,
    pub master_seed: u64,
    pub start: DateTime<Utc>,
    pub job_interval: TimeDelta,
    pub calibration: Option<CalibrationConfig>,
}

impl DeviceRunConfig {
    /// Default-shaped run with the same model on every qubit.
    pub fn uniform(model: QubitModel, master_seed: u64) -> Self {
        DeviceRunConfig {
            jobs: DEFAULT_JOBS,
            bits_per_job: DEFAULT_BITS_PER_JOB,
            models: vec![model; DEFAULT_QUBITS],
            master_seed,
            start: default_start(),
            job_interval: TimeDelta::seconds(DEFAULT_JOB_INTERVAL_SECS),
            calibration: None,
        }
    }

    pub fn qubit_count(&self) -> usize {
        self.models.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 || self.bits_per_job == 0 || self.models.is_empty() {
            return Err(Error::InvalidParameter(
                "jobs, bits per job and qubit count must all be at least 1".into(),
            ));
        }
        for model in &self.models {
            model.validate(self.jobs)?;
        }
        if let Some(cal) = &self.calibration {
            cal.validate(self.models.len())?;
        }
        Ok(())
    }

    pub fn job_id(&self, job: usize) -> String {
        format!("job-{job:04}")
    }

    pub fn job_timestamp(&self, job: usize) -> DateTime<Utc> {
        self.start + self.job_interval * job as i32
    }
}

pub fn default_start() -> DateTime<Utc> {
    DateTime::from_timestamp(DEFAULT_START_UNIX, 0).expect("valid constant")
}

/// Output of [`generate_device_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRun {
    pub jobs: Vec<JobRecord>,
    pub calibration: Vec<CalibrationRecord>,
}

/// Regenerates job `job` of a run on its own.
pub fn generate_job(config: &DeviceRunConfig, job: usize) -> Result<JobRecord> {
    if job >= config.jobs {
        return Err(Error::InvalidArgument(format!("job {job} is outside 0..{}", config.jobs)));
    }
    let streams = config
        .models
        .iter()
        .enumerate()
        .map(|(q, model)| {
            let seed = stream_seed(config.master_seed, job as u64, q as u64);
            Ok((q as u32, model.generate(job, config.bits_per_job, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    JobRecord::new(config.job_id(job), config.job_timestamp(job), streams)
}

/// Produces every job of the run, plus the calibration series if configured.
pub fn generate_device_run(config: &DeviceRunConfig) -> Result<DeviceRun> {
    config.validate()?;
    let jobs = (0..config.jobs)
        .into_par_iter()
        .map(|j| generate_job(config, j))
        .collect::<Result<Vec<_>>>()?;
    let calibration = match &config.calibration {
        Some(cal) => generate_calibration(config, cal),
        None => Vec::new(),
    };
    Ok(DeviceRun { jobs, calibration })
}

fn generate_calibration(config: &DeviceRunConfig, cal: &CalibrationConfig) -> Vec<CalibrationRecord> {
    let mut records = Vec::new();
    for (index, job) in (0..config.jobs).step_by(cal.every_jobs).enumerate() {
        let timestamp = config.job_timestamp(job);
        for (q, base) in cal.base_t1_us.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(calibration_seed(config.master_seed, index as u64, q as u64));
            let t1_us = base * (1.0 + cal.spread * (2.0 * rng.random::<f64>() - 1.0));
            records.push(CalibrationRecord { timestamp, qubit_id: q as u32, t1_us });
        }
    }
    records
}
