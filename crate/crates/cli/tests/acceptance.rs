//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p qrng-audit-cli --test acceptance`. The process
//! exits non-zero if any criterion fails.

use std::fs;
use std::panic;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use chrono::TimeDelta;
use qrng_audit::aggregate::{build_matrix, build_report, spearman};
use qrng_audit::ingest::{
    parse_calibration, parse_jobs, parse_matrix_rows, read_jobs_packed, serialize_calibration, serialize_jobs,
    serialize_matrix_rows, write_jobs_packed, JobParseOptions,
};
use qrng_audit::oracle::{approximation_error, ExactDistribution};
use qrng_audit::simulate::{
    default_start, generate_device_run, ideal_source, markov_source, stream_seed, CalibrationConfig, DeviceRunConfig,
    QubitModel, SourceModel,
};
use qrng_audit::stats::{autocorr_statistic, normalize_statistic, p_value, run_test, TestParams, Verdict};
use qrng_audit::{erfc, BitSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    o.pass &= elapsed < limit;
    o.detail = format!("{}; {:.2?} (limit {:?})", o.detail, elapsed, limit);
    o
}

fn ac1_statistic_exactness() -> Outcome {
    timed(Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        let mut mismatches = 0;
        for _ in 0..1000 {
            let n = rng.random_range(2..=64);
            let bits: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let seq = BitSequence::from_bools(bits.iter().copied()).unwrap();
            for lag in 1..n {
                let mut brute = 0u64;
                for i in 0..n - lag {
                    brute += (bits[i] ^ bits[i + lag]) as u64;
                }
                checked += 1;
                if autocorr_statistic(&seq, lag).unwrap() != brute {
                    mismatches += 1;
                }
            }
        }
        outcome(mismatches == 0, format!("{checked} (sequence, lag) pairs, {mismatches} mismatches"))
    })
}

fn ac2_normalization_spot_value() -> Outcome {
    // n = 101, l = 1 gives n - l = 100.
    let z = normalize_statistic(60, 101, 1, 0.5).unwrap();
    let p = p_value(z).unwrap();
    outcome(z == 2.0 && (p - 0.04550026).abs() <= 1e-6, format!("A' = {z}, p = {p}"))
}

fn ac3_erfc_accuracy() -> Outcome {
    let table = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/erfc_reference.csv");
    let text = fs::read_to_string(&table).expect("reference table");
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let (x, want) = line.split_once(',').unwrap();
        let (x, want): (f64, f64) = (x.parse().unwrap(), want.parse().unwrap());
        worst = worst.max((erfc(x).unwrap() - want).abs());
        rows += 1;
    }
    let at_one = erfc(1.0).unwrap();
    let pass = rows == 200 && worst <= 1e-12 && (at_one - 0.157299207050).abs() <= 1e-12;
    outcome(pass, format!("{rows} points, max abs error {worst:e}, erfc(1) = {at_one}"))
}

fn ac4_oracle_agreement() -> Outcome {
    timed(Duration::from_secs(120), || {
        let mut pmf_gap: f64 = 0.0;
        for n in 2..=20 {
            for lag in 1..n {
                let e = ExactDistribution::enumerate(n, lag, 0.5).unwrap();
                let b = ExactDistribution::binomial(n, lag).unwrap();
                for k in 0..=e.max_statistic() {
                    pmf_gap = pmf_gap.max((e.pmf(k) - b.pmf(k)).abs());
                }
            }
        }
        let mut moment_gap: f64 = 0.0;
        for p in [0.1, 0.3, 0.5] {
            let q = 2.0 * p * (1.0 - p);
            for n in 2..=20 {
                for lag in 1..n {
                    let e = ExactDistribution::enumerate(n, lag, p).unwrap();
                    moment_gap = moment_gap.max((e.mean() - q * (n - lag) as f64).abs());
                    if lag == 1 {
                        let nf = n as f64;
                        let var = (nf - 1.0) * q * (1.0 - q) + 2.0 * (nf - 2.0) * (p * (1.0 - p) - q * q);
                        moment_gap = moment_gap.max((e.variance() - var).abs());
                    }
                }
            }
        }
        outcome(
            pmf_gap <= 1e-12 && moment_gap <= 1e-9,
            format!("max pmf gap {pmf_gap:e}, max moment gap {moment_gap:e}"),
        )
    })
}

fn ac5_approximation_gap() -> Outcome {
    let table = approximation_error(8192, 1, 0.5, None).unwrap();
    match table.max_abs_difference_where_exact_in(0.005, 0.05) {
        Some(gap) => outcome(gap <= 0.002, format!("max |exact - approx| over p in [0.005, 0.05] = {gap:.6}")),
        None => outcome(false, "no exact p-values in the critical region"),
    }
}

fn fail_fraction(seqs: impl Iterator<Item = BitSequence>) -> (usize, usize) {
    let params = TestParams::default();
    let mut total = 0;
    let mut fails = 0;
    for s in seqs {
        total += 1;
        if run_test(&s, &params).unwrap().verdict == Verdict::Fail {
            fails += 1;
        }
    }
    (fails, total)
}

fn ac6_false_positive_rate() -> Outcome {
    timed(Duration::from_secs(60), || {
        let (fails, total) = fail_fraction((0..2000).map(|i| ideal_source(0.5, 8192, stream_seed(6, i, 0)).unwrap()));
        let rate = fails as f64 / total as f64;
        outcome((0.002..=0.025).contains(&rate), format!("{fails}/{total} = {rate:.4} in [0.002, 0.025]"))
    })
}

fn ac7_detection_power() -> Outcome {
    let (fails, total) =
        fail_fraction((0..200).map(|i| markov_source(0.5, 0.05, 8192, stream_seed(7, i, 0)).unwrap()));
    let rate = fails as f64 / total as f64;
    outcome(rate >= 0.90, format!("{fails}/{total} = {rate:.4} >= 0.90"))
}

fn ac8_markov_law() -> Outcome {
    let values: Vec<f64> = (0..200)
        .map(|i| autocorr_statistic(&markov_source(0.5, 0.05, 8192, stream_seed(8, i, 0)).unwrap(), 1).unwrap() as f64)
        .collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let se = sd / m.sqrt();
    let target = 8191.0 * 0.475;
    let dev = (mean - target).abs() / se;
    outcome(dev <= 3.0, format!("mean {mean:.3} vs {target:.3}, {dev:.2} SE (se {se:.3})"))
}

fn stdout_value(stdout: &str, key: &str) -> Option<f64> {
    stdout.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(": ")?.parse().ok())
}

fn ac9_fleet_surrogate(dir: &std::path::Path) -> (Outcome, String) {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let out_dir = dir.join("pipeline");
    let start = Instant::now();
    let code = qrng_audit_cli::run(
        ["qrng-audit", "pipeline", "--out-dir", out_dir.to_str().unwrap()],
        &mut stdout,
        &mut stderr,
    );
    let elapsed = start.elapsed();
    let stdout = String::from_utf8(stdout).unwrap();
    if code != 0 {
        return (outcome(false, format!("exit {code}: {}", String::from_utf8_lossy(&stderr))), stdout);
    }
    let rows = fs::read_to_string(out_dir.join("matrix.csv")).unwrap().lines().count() - 1;
    let Some(prop) = stdout_value(&stdout, "simultaneous_pass_proportion") else {
        return (outcome(false, "no simultaneous_pass_proportion in output"), stdout);
    };
    let analytic = (1.0 - ALPHA).powi(20);
    let pass = rows == 11_580 && (prop - 0.818).abs() <= 0.05 && elapsed < Duration::from_secs(300);
    let detail = format!(
        "{rows} cells, simultaneous pass {prop:.4} vs {analytic:.4} (0.818 +/- 0.05); {elapsed:.2?} (limit 300s)"
    );
    (outcome(pass, detail), stdout)
}

fn ac10_t1_relationship(pipeline_stdout: &str) -> Outcome {
    let null = stdout_value(pipeline_stdout, "spearman_t1_failure");

    let qubits = 20;
    let rhos: Vec<f64> = (0..qubits).map(|q| 0.002 * q as f64).collect();
    let config = DeviceRunConfig {
        models: rhos.iter().map(|&rho| QubitModel::Source(SourceModel::Markov { bias: 0.5, rho })).collect(),
        calibration: Some(CalibrationConfig { base_t1_us: vec![70.0; qubits], spread: 0.0, every_jobs: 50 }),
        ..DeviceRunConfig::uniform(QubitModel::Source(SourceModel::Ideal { bias: 0.5 }), 10)
    };
    let run = generate_device_run(&config).unwrap();
    let matrix = build_matrix(&run.jobs, &TestParams::default()).unwrap();
    let report = build_report(&matrix, Some(&run.calibration), ALPHA).unwrap();
    let ratios: Vec<Option<f64>> = report.qubits.iter().map(|q| q.failure_ratio).collect();
    let rho_opt: Vec<Option<f64>> = rhos.iter().map(|&r| Some(r)).collect();
    let signal = spearman(&rho_opt, &ratios).ok();

    let pass = matches!(null, Some(s) if s.abs() < 0.55) && matches!(signal, Some(s) if s >= 0.8);
    outcome(pass, format!("null |spearman(T1, failure)| = {null:?} < 0.55; spearman(rho, failure) = {signal:?} >= 0.8"))
}

fn mutate(base: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut bytes = base.to_vec();
    const ALPHABET: &[u8] = b"01,\n\r-:TZ9x\"\xff ";
    for _ in 0..rng.random_range(1..=4) {
        let at = rng.random_range(0..=bytes.len());
        match rng.random_range(0..6) {
            0 if at < bytes.len() => bytes[at] = ALPHABET[rng.random_range(0..ALPHABET.len())],
            1 if at < bytes.len() => bytes[at] = rng.random(),
            2 if at < bytes.len() => {
                bytes.remove(at);
            }
            3 => bytes.insert(at, ALPHABET[rng.random_range(0..ALPHABET.len())]),
            4 => bytes.truncate(at),
            _ => {
                let lines: Vec<&[u8]> = base.split(|&b| b == b'\n').collect();
                let line = lines[rng.random_range(0..lines.len())];
                let tail = bytes.split_off(at);
                bytes.extend_from_slice(line);
                bytes.push(b'\n');
                bytes.extend(tail);
            }
        }
    }
    bytes
}

fn ac11_round_trip_and_fuzz() -> Outcome {
    let mut round_trips = 0;
    let mut mismatches = 0;
    for (seed, model) in [
        (1, QubitModel::Source(SourceModel::Ideal { bias: 0.5 })),
        (2, QubitModel::Source(SourceModel::Ideal { bias: 0.0 })),
        (3, QubitModel::Source(SourceModel::Markov { bias: 0.3, rho: 0.4 })),
    ] {
        let config = DeviceRunConfig {
            jobs: 12,
            bits_per_job: 37 + seed as usize * 50,
            models: vec![model; 5],
            master_seed: seed,
            start: default_start(),
            job_interval: TimeDelta::seconds(61),
            calibration: Some(CalibrationConfig::scattered(5, 70.0, 0.3, 4, seed)),
        };
        let run = generate_device_run(&config).unwrap();

        let mut csv = Vec::new();
        serialize_jobs(&run.jobs, &mut csv).unwrap();
        mismatches += (parse_jobs(csv.as_slice(), JobParseOptions::default()).unwrap() != run.jobs) as usize;
        let mut packed = Vec::new();
        write_jobs_packed(&run.jobs, &mut packed).unwrap();
        mismatches += (read_jobs_packed(packed.as_slice()).unwrap() != run.jobs) as usize;
        let mut cal = Vec::new();
        serialize_calibration(&run.calibration, &mut cal).unwrap();
        mismatches += (parse_calibration(cal.as_slice()).unwrap().records != run.calibration) as usize;
        let rows = build_matrix(&run.jobs, &TestParams::default()).unwrap().to_rows();
        let mut matrix = Vec::new();
        serialize_matrix_rows(&rows, &mut matrix).unwrap();
        let reparsed = parse_matrix_rows(matrix.as_slice()).unwrap();
        let mut again = Vec::new();
        serialize_matrix_rows(&reparsed, &mut again).unwrap();
        mismatches += (reparsed != rows || again != matrix) as usize;
        round_trips += 4;
    }

    let config = DeviceRunConfig {
        jobs: 4,
        bits_per_job: 24,
        models: vec![QubitModel::Source(SourceModel::Ideal { bias: 0.5 }); 3],
        ..DeviceRunConfig::uniform(QubitModel::Source(SourceModel::Ideal { bias: 0.5 }), 11)
    };
    let mut base = Vec::new();
    serialize_jobs(&generate_device_run(&config).unwrap().jobs, &mut base).unwrap();

    let previous_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut crashes, mut errors, mut accepted, mut unlocated) = (0, 0, 0, 0);
    for i in 0..10_000 {
        let input = mutate(&base, &mut rng);
        let options = JobParseOptions { bits_per_job: (i % 2 == 0).then_some(24) };
        match panic::catch_unwind(|| parse_jobs(input.as_slice(), options)) {
            Err(_) => crashes += 1,
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(e)) => {
                errors += 1;
                unlocated += (e.line == 0) as usize;
            }
        }
    }
    panic::set_hook(previous_hook);

    outcome(
        mismatches == 0 && crashes == 0 && unlocated == 0,
        format!(
            "{round_trips} round trips, {mismatches} mismatches; 10000 mutants: {errors} errors, {accepted} accepted, {crashes} crashes"
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut total = 0;
    let mut failed = 0;
    let mut report = |id: &str, name: &str, o: Outcome| {
        println!("[{}] {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        total += 1;
        failed += !o.pass as usize;
    };
    report("AC-1", "statistic exactness", ac1_statistic_exactness());
    report("AC-2", "normalization spot value", ac2_normalization_spot_value());
    report("AC-3", "erfc accuracy", ac3_erfc_accuracy());
    report("AC-4", "oracle agreement", ac4_oracle_agreement());
    report("AC-5", "normal-approximation gap", ac5_approximation_gap());
    report("AC-6", "false-positive calibration", ac6_false_positive_rate());
    report("AC-7", "detection power", ac7_detection_power());
    report("AC-8", "Markov law", ac8_markov_law());
    let (fleet, stdout) = ac9_fleet_surrogate(dir.path());
    report("AC-9", "fleet surrogate", fleet);
    report("AC-10", "T1 relationship", ac10_t1_relationship(&stdout));
    report("AC-11", "round trip and fuzz", ac11_round_trip_and_fuzz());

    println!("{} of {total} criteria passed", total - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
