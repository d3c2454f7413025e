//! Job, calibration and p-value matrix files.
//!
//! All text formats are UTF-8 CSV with a fixed header line:
//!
//! | file        | header                                                           |
//! |-------------|------------------------------------------------------------------|
//! | jobs        | `job_id,timestamp,qubit_id,bits`                                 |
//! | calibration | `timestamp,qubit_id,t1_us`                                       |
//! | matrix      | `job_id,qubit_id,n,lag,bias,statistic,normalized,p_value,verdict` |
//!
//! Timestamps are ISO 8601 in UTC with a trailing `Z`. Writers emit `\n`
//! line endings, jobs in file order and qubits ascending, so
//! `serialize_jobs(parse_jobs(f))` is the canonical form of `f`.

use std::fmt;
use std::io::{self, Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use indexmap::IndexMap;
use thiserror::Error;

use crate::bits::{BitSequence, BitSequenceBuilder};
use crate::stats::{xor_probability, AutocorrResult, Verdict, LOW_SAMPLE_VARIANCE};
use crate::{Error, Result};

pub const JOB_HEADER: [&str; 4] = ["job_id", "timestamp", "qubit_id", "bits"];
pub const CALIBRATION_HEADER: [&str; 3] = ["timestamp", "qubit_id", "t1_us"];
pub const MATRIX_HEADER: [&str; 9] = [
    "job_id", "qubit_id", "n", "lag", "bias", "statistic", "normalized", "p_value", "verdict",
];

/// A parse failure and the 1-based line it occurred on.
#[derive(Error, Debug, Clone, PartialEq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: u64,
    pub kind: ParseErrorKind,
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("missing header line")]
    MissingHeader,
    #[error("header is `{found}`, expected `{expected}`")]
    Header { expected: String, found: String },
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("field `{field}` is empty")]
    EmptyField { field: &'static str },
    #[error("character {found:?} at position {position} of the bit string is not 0 or 1")]
    BadBit { position: usize, found: char },
    #[error("bit string has length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("duplicate entry for job `{job_id}`, qubit {qubit_id}")]
    Duplicate { job_id: String, qubit_id: u32 },
    #[error("job `{job_id}` has conflicting timestamps")]
    InconsistentTimestamp { job_id: String },
    #[error("invalid timestamp `{0}` (expected ISO 8601 UTC ending in Z)")]
    Timestamp(String),
    #[error("invalid {field} `{value}`")]
    Number { field: &'static str, value: String },
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    Csv(String),
}

fn err(line: u64, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

/// One job: an id, a timestamp, and one bit stream per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub job_id: String,
    pub timestamp: DateTime<Utc>,
    /// Ascending by qubit id, ids unique.
    pub streams: Vec<(u32, BitSequence)>,
}

impl JobRecord {
    /// Sorts `streams` by qubit id and rejects duplicate ids.
    pub fn new(job_id: String, timestamp: DateTime<Utc>, mut streams: Vec<(u32, BitSequence)>) -> Result<Self> {
        streams.sort_by_key(|(q, _)| *q);
        if let Some(w) = streams.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!(
                "job `{job_id}` lists qubit {} twice",
                w[0].0
            )));
        }
        Ok(JobRecord { job_id, timestamp, streams })
    }

    pub fn qubit_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.streams.iter().map(|(q, _)| *q)
    }

    pub fn stream(&self, qubit_id: u32) -> Option<&BitSequence> {
        self.streams
            .binary_search_by_key(&qubit_id, |(q, _)| *q)
            .ok()
            .map(|i| &self.streams[i].1)
    }
}

/// One T1 measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRecord {
    pub timestamp: DateTime<Utc>,
    pub qubit_id: u32,
    pub t1_us: f64,
}

/// Options for [`parse_jobs`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JobParseOptions {
    /// Required bits per stream; inferred from the first row when `None`.
    pub bits_per_job: Option<usize>,
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, ParseErrorKind> {
    if !s.ends_with('Z') {
        return Err(ParseErrorKind::Timestamp(s.to_string()));
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| ParseErrorKind::Timestamp(s.to_string()))
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input)
}

fn csv_writer<W: Write>(output: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(output)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> ParseError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    err(line, ParseErrorKind::Csv(e.to_string()))
}

fn into_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

/// Iterates records as `(line, record)`, checking the header and the field
/// count of every row.
struct Rows<R: Read> {
    reader: csv::Reader<R>,
    record: csv::StringRecord,
    width: usize,
    last_line: u64,
}

impl<R: Read> Rows<R> {
    fn open(input: R, header: &[&str]) -> std::result::Result<Self, ParseError> {
        let mut rows = Rows {
            reader: csv_reader(input),
            record: csv::StringRecord::new(),
            width: header.len(),
            last_line: 1,
        };
        let found = match rows.reader.read_record(&mut rows.record) {
            Ok(true) => rows.record.iter().collect::<Vec<_>>().join(","),
            Ok(false) => return Err(err(1, ParseErrorKind::MissingHeader)),
            Err(e) => return Err(csv_error(e, 1)),
        };
        let expected = header.join(",");
        if found != expected {
            return Err(err(1, ParseErrorKind::Header { expected, found }));
        }
        Ok(rows)
    }

    fn next(&mut self) -> std::result::Result<Option<(u64, &csv::StringRecord)>, ParseError> {
        match self.reader.read_record(&mut self.record) {
            Ok(false) => Ok(None),
            Ok(true) => {
                let line = self.record.position().map_or(self.last_line + 1, |p| p.line());
                self.last_line = line;
                if self.record.len() != self.width {
                    return Err(err(
                        line,
                        ParseErrorKind::FieldCount { expected: self.width, found: self.record.len() },
                    ));
                }
                Ok(Some((line, &self.record)))
            }
            Err(e) => Err(csv_error(e, self.last_line + 1)),
        }
    }
}

fn non_empty<'a>(line: u64, value: &'a str, field: &'static str) -> std::result::Result<&'a str, ParseError> {
    if value.is_empty() {
        Err(err(line, ParseErrorKind::EmptyField { field }))
    } else {
        Ok(value)
    }
}

fn parse_number<T: std::str::FromStr>(line: u64, value: &str, field: &'static str) -> std::result::Result<T, ParseError> {
    non_empty(line, value, field)?
        .parse()
        .map_err(|_| err(line, ParseErrorKind::Number { field, value: value.to_string() }))
}

fn parse_real(line: u64, value: &str, field: &'static str) -> std::result::Result<f64, ParseError> {
    let v: f64 = parse_number(line, value, field)?;
    if !v.is_finite() {
        return Err(err(line, ParseErrorKind::Number { field, value: value.to_string() }));
    }
    Ok(v)
}

fn parse_bits(line: u64, value: &str) -> std::result::Result<BitSequence, ParseError> {
    let mut builder = BitSequenceBuilder::with_capacity(value.len());
    for (position, c) in value.chars().enumerate() {
        match c {
            '0' => builder.push(false),
            '1' => builder.push(true),
            found => return Err(err(line, ParseErrorKind::BadBit { position, found })),
        }
    }
    builder
        .finish()
        .map_err(|_| err(line, ParseErrorKind::EmptyField { field: "bits" }))
}

/// Reads a job file. Rows of one job need not be adjacent; jobs are
/// returned in order of first appearance.
pub fn parse_jobs<R: Read>(input: R, options: JobParseOptions) -> std::result::Result<Vec<JobRecord>, ParseError> {
    let mut rows = Rows::open(input, &JOB_HEADER)?;
    let mut expected_len = options.bits_per_job;
    let mut jobs: IndexMap<String, (DateTime<Utc>, Vec<(u32, BitSequence)>)> = IndexMap::new();

    while let Some((line, record)) = rows.next()? {
        let job_id = non_empty(line, &record[0], "job_id")?;
        let timestamp = parse_timestamp(non_empty(line, &record[1], "timestamp")?).map_err(|k| err(line, k))?;
        let qubit_id: u32 = parse_number(line, &record[2], "qubit_id")?;
        let bits = parse_bits(line, &record[3])?;

        match expected_len {
            Some(expected) if expected != bits.len() => {
                return Err(err(line, ParseErrorKind::Length { expected, found: bits.len() }));
            }
            None => expected_len = Some(bits.len()),
            _ => {}
        }

        let entry = jobs
            .entry(job_id.to_string())
            .or_insert_with(|| (timestamp, Vec::new()));
        if entry.0 != timestamp {
            return Err(err(line, ParseErrorKind::InconsistentTimestamp { job_id: job_id.to_string() }));
        }
        if entry.1.iter().any(|(q, _)| *q == qubit_id) {
            return Err(err(line, ParseErrorKind::Duplicate { job_id: job_id.to_string(), qubit_id }));
        }
        entry.1.push((qubit_id, bits));
    }

    Ok(jobs
        .into_iter()
        .map(|(job_id, (timestamp, mut streams))| {
            streams.sort_by_key(|(q, _)| *q);
            JobRecord { job_id, timestamp, streams }
        })
        .collect())
}

/// Writes the canonical job file.
pub fn serialize_jobs<W: Write>(records: &[JobRecord], output: W) -> io::Result<()> {
    let mut w = csv_writer(output);
    w.write_record(JOB_HEADER).map_err(into_io)?;
    for job in records {
        let ts = format_timestamp(&job.timestamp);
        for (qubit, bits) in &job.streams {
            w.write_record([job.job_id.as_str(), &ts, &qubit.to_string(), &bits.to_string()])
                .map_err(into_io)?;
        }
    }
    w.flush()
}

/// Calibration records plus the number of duplicate keys that were
/// overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    pub records: Vec<CalibrationRecord>,
    pub duplicates: usize,
}

/// Reads a calibration file. A repeated `(timestamp, qubit_id)` keeps the
/// position of its first row and the value of its last.
pub fn parse_calibration<R: Read>(input: R) -> std::result::Result<CalibrationFile, ParseError> {
    let mut rows = Rows::open(input, &CALIBRATION_HEADER)?;
    let mut by_key: IndexMap<(DateTime<Utc>, u32), f64> = IndexMap::new();
    let mut duplicates = 0;
    while let Some((line, record)) = rows.next()? {
        let timestamp = parse_timestamp(non_empty(line, &record[0], "timestamp")?).map_err(|k| err(line, k))?;
        let qubit_id: u32 = parse_number(line, &record[1], "qubit_id")?;
        let t1_us = parse_real(line, &record[2], "t1_us")?;
        if t1_us <= 0.0 {
            return Err(err(line, ParseErrorKind::Range(format!("t1_us {t1_us} must be positive"))));
        }
        if by_key.insert((timestamp, qubit_id), t1_us).is_some() {
            duplicates += 1;
        }
    }
    let records = by_key
        .into_iter()
        .map(|((timestamp, qubit_id), t1_us)| CalibrationRecord { timestamp, qubit_id, t1_us })
        .collect();
    Ok(CalibrationFile { records, duplicates })
}

pub fn serialize_calibration<W: Write>(records: &[CalibrationRecord], output: W) -> io::Result<()> {
    let mut w = csv_writer(output);
    w.write_record(CALIBRATION_HEADER).map_err(into_io)?;
    for r in records {
        w.write_record([format_timestamp(&r.timestamp), r.qubit_id.to_string(), r.t1_us.to_string()])
            .map_err(into_io)?;
    }
    w.flush()
}

/// One cell of a p-value matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub job_id: String,
    pub qubit_id: u32,
    pub result: AutocorrResult,
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn serialize_matrix_rows<W: Write>(rows: &[MatrixRow], output: W) -> io::Result<()> {
    let mut w = csv_writer(output);
    w.write_record(MATRIX_HEADER).map_err(into_io)?;
    for row in rows {
        let r = &row.result;
        w.write_record([
            row.job_id.clone(),
            row.qubit_id.to_string(),
            r.n.to_string(),
            r.lag.to_string(),
            r.bias.to_string(),
            r.statistic.to_string(),
            opt_to_string(r.normalized),
            opt_to_string(r.p_value),
            r.verdict.to_string(),
        ])
        .map_err(into_io)?;
    }
    w.flush()
}

/// Reads a matrix file, checking each row for internal consistency.
pub fn parse_matrix_rows<R: Read>(input: R) -> std::result::Result<Vec<MatrixRow>, ParseError> {
    let mut rows = Rows::open(input, &MATRIX_HEADER)?;
    let mut out = Vec::new();
    while let Some((line, record)) = rows.next()? {
        let job_id = non_empty(line, &record[0], "job_id")?.to_string();
        let qubit_id: u32 = parse_number(line, &record[1], "qubit_id")?;
        let n: usize = parse_number(line, &record[2], "n")?;
        let lag: usize = parse_number(line, &record[3], "lag")?;
        let bias = parse_real(line, &record[4], "bias")?;
        let statistic: u64 = parse_number(line, &record[5], "statistic")?;
        let normalized = if record[6].is_empty() { None } else { Some(parse_real(line, &record[6], "normalized")?) };
        let p_value = if record[7].is_empty() { None } else { Some(parse_real(line, &record[7], "p_value")?) };
        let verdict: Verdict = record[8]
            .parse()
            .map_err(|_| err(line, ParseErrorKind::Number { field: "verdict", value: record[8].to_string() }))?;

        let range = |msg: String| err(line, ParseErrorKind::Range(msg));
        if lag == 0 || lag >= n {
            return Err(range(format!("lag {lag} invalid for n = {n}")));
        }
        if statistic > (n - lag) as u64 {
            return Err(range(format!("statistic {statistic} exceeds n - lag = {}", n - lag)));
        }
        if !(0.0..=1.0).contains(&bias) {
            return Err(range(format!("bias {bias} is outside [0, 1]")));
        }
        match (verdict, normalized, p_value) {
            (Verdict::Degenerate, None, None) => {}
            (Verdict::Pass | Verdict::Fail, Some(_), Some(p)) if p > 0.0 && p <= 1.0 => {}
            _ => return Err(range(format!("verdict {verdict} inconsistent with normalized/p_value fields"))),
        }
        let q = xor_probability(bias);
        let variance = (n - lag) as f64 * q * (1.0 - q);
        out.push(MatrixRow {
            job_id,
            qubit_id,
            result: AutocorrResult {
                n,
                lag,
                statistic,
                bias,
                normalized,
                p_value,
                verdict,
                low_sample: variance < LOW_SAMPLE_VARIANCE,
            },
        });
    }
    Ok(out)
}

const PACKED_MAGIC: &[u8; 8] = b"QRNGJOB1";

/// Writes jobs in the packed binary layout.
///
/// All integers are little-endian:
///
/// ```text
/// magic  "QRNGJOB1"
/// u32    job count
/// per job:
///   u32 id length, id bytes (UTF-8)
///   i64 unix seconds, u32 nanoseconds
///   u32 stream count
///   per stream: u32 qubit id, u64 bit length, ceil(len/8) bytes, MSB first
/// ```
pub fn write_jobs_packed<W: Write>(records: &[JobRecord], mut out: W) -> io::Result<()> {
    let count = |n: usize| {
        u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "count exceeds u32"))
    };
    out.write_all(PACKED_MAGIC)?;
    out.write_all(&count(records.len())?.to_le_bytes())?;
    for job in records {
        out.write_all(&count(job.job_id.len())?.to_le_bytes())?;
        out.write_all(job.job_id.as_bytes())?;
        out.write_all(&job.timestamp.timestamp().to_le_bytes())?;
        out.write_all(&job.timestamp.timestamp_subsec_nanos().to_le_bytes())?;
        out.write_all(&count(job.streams.len())?.to_le_bytes())?;
        for (qubit, bits) in &job.streams {
            out.write_all(&qubit.to_le_bytes())?;
            out.write_all(&(bits.len() as u64).to_le_bytes())?;
            out.write_all(&bits.to_msb_bytes())?;
        }
    }
    out.flush()
}

/// Byte cursor for the packed reader.
struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::InvalidArgument(format!(
                "packed job file truncated at byte {} (needed {n} more bytes)",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bad(&self, what: impl fmt::Display) -> Error {
        Error::InvalidArgument(format!("packed job file: {what} at byte {}", self.pos))
    }
}

/// Reads the layout written by [`write_jobs_packed`].
pub fn read_jobs_packed<R: Read>(mut input: R) -> Result<Vec<JobRecord>> {
    let mut data = Vec::new();
    input
        .read_to_end(&mut data)
        .map_err(|e| Error::InvalidArgument(format!("reading packed job file: {e}")))?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if cur.take(PACKED_MAGIC.len())? != PACKED_MAGIC {
        return Err(cur.bad("bad magic"));
    }
    let job_count = cur.u32()?;
    let mut jobs = Vec::new();
    for _ in 0..job_count {
        let id_len = cur.u32()? as usize;
        let job_id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| cur.bad("job id is not UTF-8"))?
            .to_string();
        let secs = cur.u64()? as i64;
        let nanos = cur.u32()?;
        let timestamp = DateTime::from_timestamp(secs, nanos).ok_or_else(|| cur.bad("timestamp out of range"))?;
        let stream_count = cur.u32()?;
        let mut streams = Vec::new();
        for _ in 0..stream_count {
            let qubit = cur.u32()?;
            let bit_len = usize::try_from(cur.u64()?).map_err(|_| cur.bad("bit length too large"))?;
            if bit_len == 0 {
                return Err(cur.bad("empty stream"));
            }
            let bytes = cur.take(bit_len.div_ceil(8))?;
            streams.push((qubit, BitSequence::from_msb_bytes(bytes, bit_len)?));
        }
        jobs.push(JobRecord::new(job_id, timestamp, streams)?);
    }
    if cur.pos != data.len() {
        return Err(cur.bad("trailing data"));
    }
    Ok(jobs)
}
