//! Fleet-level summaries over many jobs and qubits.

use std::collections::BTreeMap;
use std::io::{self, Write};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use rayon::prelude::*;

use crate::ingest::{CalibrationRecord, JobRecord, MatrixRow};
use crate::stats::{run_test, AutocorrResult, TestParams, Verdict};
use crate::{Error, Result};

/// Test results for every (job, qubit) pair, rows in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    job_ids: Vec<String>,
    timestamps: Option<Vec<DateTime<Utc>>>,
    qubit_ids: Vec<u32>,
    cells: Vec<Vec<AutocorrResult>>,
}

impl PValueMatrix {
    pub fn job_ids(&self) -> &[String] {
        &self.job_ids
    }

    /// Job timestamps, when the matrix was built from job records.
    pub fn timestamps(&self) -> Option<&[DateTime<Utc>]> {
        self.timestamps.as_deref()
    }

    pub fn qubit_ids(&self) -> &[u32] {
        &self.qubit_ids
    }

    pub fn rows(&self) -> &[Vec<AutocorrResult>] {
        &self.cells
    }

    pub fn row_count(&self) -> usize {
        self.cells.len()
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &AutocorrResult> + '_ {
        self.cells.iter().map(move |row| &row[index])
    }

    /// Rebuilds a matrix from file rows. Rows of a job keep the file's job
    /// order; every job must cover the same qubit set.
    pub fn from_rows(rows: Vec<MatrixRow>) -> Result<Self> {
        let mut jobs: IndexMap<String, Vec<(u32, AutocorrResult)>> = IndexMap::new();
        for row in rows {
            let cells = jobs.entry(row.job_id.clone()).or_default();
            if cells.iter().any(|(q, _)| *q == row.qubit_id) {
                return Err(Error::Shape(format!(
                    "job `{}` has two rows for qubit {}",
                    row.job_id, row.qubit_id
                )));
            }
            cells.push((row.qubit_id, row.result));
        }
        let mut qubit_ids: Option<Vec<u32>> = None;
        let mut job_ids = Vec::with_capacity(jobs.len());
        let mut cells = Vec::with_capacity(jobs.len());
        for (job_id, mut row) in jobs {
            row.sort_by_key(|(q, _)| *q);
            let ids: Vec<u32> = row.iter().map(|(q, _)| *q).collect();
            match &qubit_ids {
                None => qubit_ids = Some(ids),
                Some(expected) if *expected != ids => {
                    return Err(Error::Shape(format!("job `{job_id}` has qubits {ids:?}, expected {expected:?}")));
                }
                _ => {}
            }
            job_ids.push(job_id);
            cells.push(row.into_iter().map(|(_, r)| r).collect());
        }
        Ok(PValueMatrix {
            job_ids,
            timestamps: None,
            qubit_ids: qubit_ids.unwrap_or_default(),
            cells,
        })
    }

    /// Flattens into file rows, row-major.
    pub fn to_rows(&self) -> Vec<MatrixRow> {
        self.job_ids
            .iter()
            .zip(&self.cells)
            .flat_map(|(job_id, row)| {
                self.qubit_ids.iter().zip(row).map(move |(q, r)| MatrixRow {
                    job_id: job_id.clone(),
                    qubit_id: *q,
                    result: *r,
                })
            })
            .collect()
    }
}

/// Runs the test on every stream of every job. Jobs are ordered by
/// timestamp (stable for ties).
pub fn build_matrix(jobs: &[JobRecord], params: &TestParams) -> Result<PValueMatrix> {
    let mut order: Vec<&JobRecord> = jobs.iter().collect();
    order.sort_by_key(|j| j.timestamp);

    let qubit_ids: Vec<u32> = order.first().map(|j| j.qubit_ids().collect()).unwrap_or_default();
    for job in &order {
        if !job.qubit_ids().eq(qubit_ids.iter().copied()) {
            return Err(Error::Shape(format!(
                "job `{}` has qubits {:?}, expected {qubit_ids:?}",
                job.job_id,
                job.qubit_ids().collect::<Vec<_>>()
            )));
        }
    }

    let cells = order
        .par_iter()
        .map(|job| {
            job.streams
                .iter()
                .map(|(_, bits)| run_test(bits, params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PValueMatrix {
        job_ids: order.iter().map(|j| j.job_id.clone()).collect(),
        timestamps: Some(order.iter().map(|j| j.timestamp).collect()),
        qubit_ids,
        cells,
    })
}

/// Verdict tallies for one qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitCounts {
    pub qubit_id: u32,
    pub pass: usize,
    pub fail: usize,
    pub degenerate: usize,
}

impl QubitCounts {
    /// `fail / (fail + pass)`; `None` when every cell is degenerate.
    pub fn failure_ratio(&self) -> Option<f64> {
        let tested = self.pass + self.fail;
        (tested > 0).then(|| self.fail as f64 / tested as f64)
    }
}

/// Per-qubit tallies at significance level `alpha`. Degenerate cells are
/// counted apart and excluded from the failure ratio.
pub fn failure_ratio_per_qubit(matrix: &PValueMatrix, alpha: f64) -> Result<Vec<QubitCounts>> {
    if matrix.row_count() == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(matrix
        .qubit_ids
        .iter()
        .enumerate()
        .map(|(i, &qubit_id)| {
            let mut counts = QubitCounts { qubit_id, pass: 0, fail: 0, degenerate: 0 };
            for cell in matrix.column(i) {
                match cell.verdict_at(alpha) {
                    Verdict::Pass => counts.pass += 1,
                    Verdict::Fail => counts.fail += 1,
                    Verdict::Degenerate => counts.degenerate += 1,
                }
            }
            counts
        })
        .collect())
}

/// Fraction of jobs in which every qubit passes.
pub fn simultaneous_pass_proportion(matrix: &PValueMatrix, alpha: f64) -> Result<f64> {
    if matrix.row_count() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let passing = matrix
        .cells
        .iter()
        .filter(|row| row.iter().all(|c| c.verdict_at(alpha) == Verdict::Pass))
        .count();
    Ok(passing as f64 / matrix.row_count() as f64)
}

/// Arithmetic mean T1 per qubit, summed in record order.
pub fn mean_t1_per_qubit(calibration: &[CalibrationRecord]) -> BTreeMap<u32, f64> {
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for r in calibration {
        let e = sums.entry(r.qubit_id).or_insert((0.0, 0));
        e.0 += r.t1_us;
        e.1 += 1;
    }
    sums.into_iter().map(|(q, (s, n))| (q, s / n as f64)).collect()
}

/// Average ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold equal values: ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
///
/// Pairs where either side is `None` are dropped. Computed as the Pearson
/// correlation of the rank vectors, which stays exact under ties.
pub fn spearman(xs: &[Option<f64>], ys: &[Option<f64>]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .unzip();
    if x.len() < 3 {
        return Err(Error::InsufficientData(x.len()));
    }
    let rx = average_ranks(&x);
    let ry = average_ranks(&y);
    let mean = (x.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one input is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Per-qubit line of an [`AggregateReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitSummary {
    pub counts: QubitCounts,
    pub failure_ratio: Option<f64>,
    pub mean_t1_us: Option<f64>,
}

/// Everything the aggregate step reports.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub alpha: f64,
    pub jobs: usize,
    pub qubits: Vec<QubitSummary>,
    pub simultaneous_pass_proportion: f64,
    /// Share of non-degenerate cells with `p >= alpha`.
    pub pass_proportion_overall: Option<f64>,
    /// Rank correlation of mean T1 against failure ratio, when computable.
    pub spearman_t1_failure: Option<f64>,
    /// Why `spearman_t1_failure` is missing, if it is.
    pub spearman_unavailable: Option<String>,
    pub degenerate_count: usize,
    pub has_calibration: bool,
}

/// Assembles the report. Without calibration data the T1 fields stay empty.
pub fn build_report(
    matrix: &PValueMatrix,
    calibration: Option<&[CalibrationRecord]>,
    alpha: f64,
) -> Result<AggregateReport> {
    let counts = failure_ratio_per_qubit(matrix, alpha)?;
    let simultaneous = simultaneous_pass_proportion(matrix, alpha)?;
    let means = calibration.map(mean_t1_per_qubit);

    let qubits: Vec<QubitSummary> = counts
        .iter()
        .map(|c| QubitSummary {
            counts: *c,
            failure_ratio: c.failure_ratio(),
            mean_t1_us: means.as_ref().and_then(|m| m.get(&c.qubit_id).copied()),
        })
        .collect();

    let pass: usize = counts.iter().map(|c| c.pass).sum();
    let fail: usize = counts.iter().map(|c| c.fail).sum();
    let degenerate_count = counts.iter().map(|c| c.degenerate).sum();

    let (spearman_t1_failure, spearman_unavailable) = if means.is_some() {
        let t1: Vec<Option<f64>> = qubits.iter().map(|q| q.mean_t1_us).collect();
        let ratios: Vec<Option<f64>> = qubits.iter().map(|q| q.failure_ratio).collect();
        match spearman(&t1, &ratios) {
            Ok(rho) => (Some(rho), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("no calibration data".to_string()))
    };

    Ok(AggregateReport {
        alpha,
        jobs: matrix.row_count(),
        qubits,
        simultaneous_pass_proportion: simultaneous,
        pass_proportion_overall: (pass + fail > 0).then(|| pass as f64 / (pass + fail) as f64),
        spearman_t1_failure,
        spearman_unavailable,
        degenerate_count,
        has_calibration: means.is_some(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the report CSV: one row per qubit, a blank line, then a
/// `field,value` block with the scalar results.
pub fn write_report<W: Write>(report: &AggregateReport, mut out: W) -> io::Result<()> {
    writeln!(out, "qubit_id,failure_ratio,mean_t1_us,degenerate_count")?;
    for q in &report.qubits {
        writeln!(
            out,
            "{},{},{},{}",
            q.counts.qubit_id,
            fmt_opt(q.failure_ratio),
            fmt_opt(q.mean_t1_us),
            q.counts.degenerate
        )?;
    }
    writeln!(out)?;
    writeln!(out, "field,value")?;
    writeln!(out, "jobs,{}", report.jobs)?;
    writeln!(out, "qubits,{}", report.qubits.len())?;
    writeln!(out, "alpha,{}", report.alpha)?;
    writeln!(out, "simultaneous_pass_proportion,{}", report.simultaneous_pass_proportion)?;
    writeln!(out, "pass_proportion_overall,{}", fmt_opt(report.pass_proportion_overall))?;
    writeln!(out, "spearman_t1_failure,{}", fmt_opt(report.spearman_t1_failure))?;
    writeln!(out, "degenerate_count,{}", report.degenerate_count)?;
    writeln!(
        out,
        "note,spearman_t1_failure operationalizes a visual no-relationship reading as a rank correlation; no decision threshold is implied"
    )?;
    if let Some(reason) = &report.spearman_unavailable {
        writeln!(out, "spearman_unavailable,{}", reason.replace(',', ";"))?;
    }
    out.flush()
}

/// Writes `qubit_id,mean_t1_us,failure_ratio` for plotting.
pub fn write_scatter<W: Write>(report: &AggregateReport, mut out: W) -> io::Result<()> {
    writeln!(out, "qubit_id,mean_t1_us,failure_ratio")?;
    for q in &report.qubits {
        writeln!(out, "{},{},{}", q.counts.qubit_id, fmt_opt(q.mean_t1_us), fmt_opt(q.failure_ratio))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitSequence;
    use proptest::prelude::*;

    fn cell(p: Option<f64>) -> AutocorrResult {
        AutocorrResult {
            n: 100,
            lag: 1,
            statistic: 50,
            bias: if p.is_some() { 0.5 } else { 1.0 },
            normalized: p.map(|_| 0.0),
            p_value: p,
            verdict: match p {
                Some(p) => Verdict::from_p_value(p, 0.01),
                None => Verdict::Degenerate,
            },
            low_sample: false,
        }
    }

    fn matrix(rows: Vec<Vec<Option<f64>>>) -> PValueMatrix {
        let width = rows.first().map_or(0, |r| r.len());
        PValueMatrix {
            job_ids: (0..rows.len()).map(|i| format!("j{i}")).collect(),
            timestamps: None,
            qubit_ids: (0..width as u32).collect(),
            cells: rows.into_iter().map(|r| r.into_iter().map(cell).collect()).collect(),
        }
    }

    const F: Option<f64> = Some(0.001);
    const P: Option<f64> = Some(0.5);
    const D: Option<f64> = None;

    #[test]
    fn failure_ratio_examples() {
        let m = matrix(vec![vec![F, P, F], vec![P, P, P], vec![P, P, D], vec![P, P, P]]);
        let counts = failure_ratio_per_qubit(&m, 0.01).unwrap();
        assert_eq!(counts[0].failure_ratio(), Some(0.25));
        assert_eq!(counts[1].failure_ratio(), Some(0.0));
        assert_eq!(counts[2].failure_ratio(), Some(1.0 / 3.0));
        assert_eq!(counts[2].degenerate, 1);

        let all_degenerate = matrix(vec![vec![D], vec![D]]);
        assert_eq!(failure_ratio_per_qubit(&all_degenerate, 0.01).unwrap()[0].failure_ratio(), None);
    }

    #[test]
    fn alpha_is_applied_at_aggregation() {
        let m = matrix(vec![vec![Some(0.03)]]);
        assert_eq!(failure_ratio_per_qubit(&m, 0.01).unwrap()[0].fail, 0);
        assert_eq!(failure_ratio_per_qubit(&m, 0.05).unwrap()[0].fail, 1);
        let edge = matrix(vec![vec![Some(0.01)]]);
        assert_eq!(simultaneous_pass_proportion(&edge, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn simultaneous_pass_examples() {
        assert_eq!(simultaneous_pass_proportion(&matrix(vec![vec![P, P], vec![P, P]]), 0.01).unwrap(), 1.0);
        assert_eq!(simultaneous_pass_proportion(&matrix(vec![vec![F, P], vec![P, F]]), 0.01).unwrap(), 0.0);
        assert_eq!(simultaneous_pass_proportion(&matrix(vec![vec![D, P], vec![P, P]]), 0.01).unwrap(), 0.5);
        assert_eq!(simultaneous_pass_proportion(&matrix(vec![]), 0.01), Err(Error::EmptyMatrix));
    }

    #[test]
    fn mean_t1_examples() {
        let ts = DateTime::from_timestamp(0, 0).unwrap();
        let rec = |q, t| CalibrationRecord { timestamp: ts, qubit_id: q, t1_us: t };
        let means = mean_t1_per_qubit(&[rec(0, 70.0), rec(1, 60.0), rec(1, 80.0)]);
        assert_eq!(means[&0], 70.0);
        assert_eq!(means[&1], 70.0);
        assert!(!means.contains_key(&2));
    }

    #[test]
    fn spearman_examples() {
        let s = |x: &[f64], y: &[f64]| {
            spearman(
                &x.iter().copied().map(Some).collect::<Vec<_>>(),
                &y.iter().copied().map(Some).collect::<Vec<_>>(),
            )
        };
        assert_eq!(s(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(s(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0);
        assert!((s(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(s(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientData(2)));
        assert!(matches!(s(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        // missing values are dropped pairwise
        let r = spearman(&[Some(1.0), None, Some(2.0), Some(3.0)], &[Some(1.0), Some(9.0), Some(2.0), Some(3.0)]);
        assert_eq!(r.unwrap(), 1.0);
    }

    #[test]
    fn spearman_with_ties_matches_hand_computation() {
        // x ranks [1, 2.5, 2.5, 4], y ranks [1, 2, 3, 4]: Pearson of the ranks.
        let x = [1.0, 2.0, 2.0, 3.0].map(Some);
        let y = [1.0, 2.0, 3.0, 4.0].map(Some);
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((spearman(&x, &y).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn matrix_from_verdicts() {
        let ts = DateTime::from_timestamp(0, 0).unwrap();
        let zeros: BitSequence = "0000".parse().unwrap();
        let alt: BitSequence = "0101010101010101".parse().unwrap();
        let mk = |id: &str, s: &BitSequence| JobRecord::new(id.into(), ts, vec![(0, s.clone()), (1, s.clone())]).unwrap();

        let m = build_matrix(&[mk("a", &zeros), mk("b", &zeros)], &TestParams::default()).unwrap();
        assert!(m.rows().iter().flatten().all(|c| c.verdict == Verdict::Degenerate));

        let m = build_matrix(&[mk("a", &alt), mk("b", &alt)], &TestParams::default()).unwrap();
        assert!(m.rows().iter().flatten().all(|c| c.verdict == Verdict::Fail));

        let ragged = JobRecord::new("c".into(), ts, vec![(0, alt.clone())]).unwrap();
        assert!(matches!(build_matrix(&[mk("a", &alt), ragged], &TestParams::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn matrix_orders_rows_by_time() {
        let bits: BitSequence = "0110".parse().unwrap();
        let at = |s| DateTime::from_timestamp(s, 0).unwrap();
        let jobs = vec![
            JobRecord::new("late".into(), at(10), vec![(0, bits.clone())]).unwrap(),
            JobRecord::new("early".into(), at(5), vec![(0, bits.clone())]).unwrap(),
        ];
        let m = build_matrix(&jobs, &TestParams::default()).unwrap();
        assert_eq!(m.job_ids(), ["early", "late"]);
        let back = PValueMatrix::from_rows(m.to_rows()).unwrap();
        assert_eq!(back.job_ids(), m.job_ids());
        assert_eq!(back.rows(), m.rows());
    }

    #[test]
    fn report_requires_rows() {
        assert_eq!(build_report(&matrix(vec![]), None, 0.01), Err(Error::EmptyMatrix));
    }

    #[test]
    fn report_without_calibration_omits_t1() {
        let r = build_report(&matrix(vec![vec![P, F, D]]), None, 0.01).unwrap();
        assert!(!r.has_calibration);
        assert!(r.qubits.iter().all(|q| q.mean_t1_us.is_none()));
        assert_eq!(r.spearman_t1_failure, None);
        assert_eq!(r.degenerate_count, 1);
        assert_eq!(r.pass_proportion_overall, Some(0.5));
        let mut buf = Vec::new();
        write_report(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("qubit_id,failure_ratio,mean_t1_us,degenerate_count\n0,0,,0\n1,1,,0\n2,,,1\n\nfield,value\n"));
    }

    fn arb_matrix() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
        (1usize..6).prop_flat_map(|w| {
            proptest::collection::vec(
                proptest::collection::vec(prop_oneof![Just(None), (1e-6f64..1.0).prop_map(Some)], w),
                1..30,
            )
        })
    }

    proptest! {
        #[test]
        fn counting_identities(rows in arb_matrix(), alpha in 0.001f64..0.2) {
            let m = matrix(rows);
            let counts = failure_ratio_per_qubit(&m, alpha).unwrap();
            for c in &counts {
                prop_assert_eq!(c.pass + c.fail + c.degenerate, m.row_count());
            }
            let sim = simultaneous_pass_proportion(&m, alpha).unwrap();
            for c in &counts {
                let pass_share = c.pass as f64 / m.row_count() as f64;
                prop_assert!(sim <= pass_share + 1e-15);
                if let Some(r) = c.failure_ratio() {
                    prop_assert!(sim <= 1.0 - r + 1e-15);
                }
            }
        }

        #[test]
        fn report_is_invariant_to_row_permutation(rows in arb_matrix(), shift in 0usize..30) {
            let mut rotated = rows.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            let a = build_report(&matrix(rows), None, 0.01).unwrap();
            let b = build_report(&matrix(rotated), None, 0.01).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn spearman_is_scale_invariant(
            pairs in proptest::collection::vec((0.1f64..100.0, 0.0f64..1.0), 3..25),
            scale in 0.001f64..1000.0,
        ) {
            let xs: Vec<Option<f64>> = pairs.iter().map(|p| Some(p.0)).collect();
            let ys: Vec<Option<f64>> = pairs.iter().map(|p| Some(p.1)).collect();
            let scaled: Vec<Option<f64>> = xs.iter().map(|x| x.map(|v| v * scale)).collect();
            match (spearman(&xs, &ys), spearman(&scaled, &ys)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((-1.0..=1.0).contains(&a));
                    prop_assert_eq!(a, b);
                }
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }
}
