//! Exact null distributions of the autocorrelation statistic.
//!
//! Two independent routes produce the probability mass function of `A_l`
//! for i.i.d. Bernoulli(`p`) bits:
//!
//! * [`ExactDistribution::enumerate`] visits all `2^n` sequences. It works for
//!   any bias but only up to [`ENUMERATION_LIMIT`] bits.
//! * [`ExactDistribution::binomial`] is the closed form at `p = 1/2`, where
//!   `A_l ~ Binomial(n - l, 1/2)` exactly. Terms are evaluated in log space
//!   with the saddle-point expansion, so it stays accurate for `n` in the
//!   hundreds of thousands.
//!
//! [`approximation_error`] compares either against the normal approximation
//! used by [`crate::stats::run_test`].

use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::stats::{normalize_statistic, p_value, xor_probability};
use crate::{Error, Result};

/// Largest `n` accepted by [`ExactDistribution::enumerate`].
pub const ENUMERATION_LIMIT: usize = 24;

/// Exact probability mass of `A_l` over `0..=n-lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub n: usize,
    pub lag: usize,
    pub bias: f64,
    pmf: Vec<f64>,
}

impl ExactDistribution {
    /// Brute-force enumeration over all `2^n` sequences.
    ///
    /// Sequences are first tallied by (number of ones, statistic) in exact
    /// integer counters, so the result does not depend on how the work was
    /// split across threads. The bias weights are applied once at the end.
    pub fn enumerate(n: usize, lag: usize, bias: f64) -> Result<Self> {
        if n > ENUMERATION_LIMIT {
            return Err(Error::SizeLimit { n, max: ENUMERATION_LIMIT });
        }
        check_shape(n, lag)?;
        check_bias(bias)?;

        let pairs = n - lag;
        let pair_mask = (1u32 << pairs) - 1;
        let width = pairs + 1;
        let total = 1u32 << n;
        // 2^10 blocks keeps per-block tally allocation small against the work.
        let block = (total >> 10).max(1);

        let tally = (0..total.div_ceil(block))
            .into_par_iter()
            .map(|b| {
                let mut counts = vec![0u64; (n + 1) * width];
                let start = b * block;
                let end = (start + block).min(total);
                for s in start..end {
                    let ones = s.count_ones() as usize;
                    let stat = ((s ^ (s >> lag)) & pair_mask).count_ones() as usize;
                    counts[ones * width + stat] += 1;
                }
                counts
            })
            .reduce(
                || vec![0u64; (n + 1) * width],
                |mut acc, c| {
                    acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
                    acc
                },
            );

        let mut pmf = vec![0.0; width];
        for ones in 0..=n {
            let weight = bias.powi(ones as i32) * (1.0 - bias).powi((n - ones) as i32);
            for (k, slot) in pmf.iter_mut().enumerate() {
                *slot += tally[ones * width + k] as f64 * weight;
            }
        }
        Ok(ExactDistribution { n, lag, bias, pmf })
    }

    /// `Binomial(n - lag, 1/2)`, the exact law of `A_l` for fair bits.
    pub fn binomial(n: usize, lag: usize) -> Result<Self> {
        check_shape(n, lag)?;
        let trials = (n - lag) as u64;
        let pmf = (0..=trials)
            .into_par_iter()
            .map(|k| binomial_pmf(k, trials, 0.5))
            .collect();
        Ok(ExactDistribution { n, lag, bias: 0.5, pmf })
    }

    /// Probability of observing statistic `k`.
    pub fn pmf(&self, k: u64) -> f64 {
        self.pmf.get(k as usize).copied().unwrap_or(0.0)
    }

    /// The mass function indexed by statistic value.
    pub fn masses(&self) -> &[f64] {
        &self.pmf
    }

    /// Largest attainable statistic, `n - lag`.
    pub fn max_statistic(&self) -> u64 {
        (self.n - self.lag) as u64
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.pmf
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(2) * p)
            .sum()
    }
}

fn check_shape(n: usize, lag: usize) -> Result<()> {
    if lag == 0 || lag >= n {
        return Err(Error::InvalidLag { lag, len: n });
    }
    Ok(())
}

fn check_bias(bias: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&bias) {
        return Err(Error::InvalidArgument(format!("bias {bias} is outside [0, 1]")));
    }
    Ok(())
}

/// Null mean of `A_l`: `2p(1-p)(n-l)`.
pub fn null_mean(n: usize, lag: usize, bias: f64) -> f64 {
    xor_probability(bias) * (n - lag) as f64
}

/// Exact null variance of `A_l` for i.i.d. bits of bias `p`.
///
/// With `q = 2p(1-p)`, the XOR terms `Y_i = X_i ^ X_{i+l}` are Bernoulli(`q`)
/// and `Y_i`, `Y_{i+l}` share the bit `X_{i+l}`, giving
/// `Cov(Y_i, Y_{i+l}) = p(1-p) - q^2`. There are `max(n - 2l, 0)` such pairs:
///
/// ```text
/// Var A_l = (n-l) q (1-q) + 2 max(n-2l, 0) (p(1-p) - q^2)
/// ```
///
/// At `p = 1/2` the covariance vanishes and this equals the binomial
/// variance used for normalisation.
pub fn null_variance_exact(n: usize, lag: usize, bias: f64) -> f64 {
    let q = xor_probability(bias);
    let pairs = (n - lag) as f64;
    let overlapping = n.saturating_sub(2 * lag) as f64;
    pairs * q * (1.0 - q) + 2.0 * overlapping * (bias * (1.0 - bias) - q * q)
}

/// Exact two-sided p-value: total mass at least as far from the mean as
/// `observed`.
pub fn exact_two_sided_p(dist: &ExactDistribution, observed: u64) -> Result<f64> {
    if observed > dist.max_statistic() {
        return Err(Error::InvalidArgument(format!(
            "observed statistic {observed} is outside 0..={}",
            dist.max_statistic()
        )));
    }
    let mean = dist.mean();
    let threshold = (observed as f64 - mean).abs() - 1e-9 * mean.abs().max(1.0);
    let mut tail: Vec<f64> = dist
        .pmf
        .iter()
        .enumerate()
        .filter(|(k, _)| (*k as f64 - mean).abs() >= threshold)
        .map(|(_, &p)| p)
        .collect();
    tail.sort_by(f64::total_cmp);
    Ok(tail.iter().sum::<f64>().min(1.0))
}

/// One row of an approximation-error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationRow {
    pub k: u64,
    pub exact: f64,
    pub approx: f64,
    /// `approx - exact`.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationTable {
    pub n: usize,
    pub lag: usize,
    pub bias: f64,
    pub rows: Vec<ApproximationRow>,
}

impl ApproximationTable {
    pub fn max_abs_difference(&self) -> f64 {
        self.rows.iter().map(|r| r.difference.abs()).fold(0.0, f64::max)
    }

    /// Largest `|difference|` among rows whose exact p-value lies in
    /// `[lo, hi]`, or `None` if no row does.
    pub fn max_abs_difference_where_exact_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.exact >= lo && r.exact <= hi)
            .map(|r| r.difference.abs())
            .reduce(f64::max)
    }
}

/// The exact distribution for `(n, lag, bias)` from whichever oracle applies.
pub fn exact_distribution(n: usize, lag: usize, bias: f64) -> Result<ExactDistribution> {
    if bias == 0.5 {
        ExactDistribution::binomial(n, lag)
    } else {
        ExactDistribution::enumerate(n, lag, bias)
    }
}

/// Tabulates exact against normal-approximation p-values for each `k` in
/// `k_range`. The range defaults to every attainable statistic.
pub fn approximation_error(
    n: usize,
    lag: usize,
    bias: f64,
    k_range: Option<RangeInclusive<u64>>,
) -> Result<ApproximationTable> {
    check_shape(n, lag)?;
    check_bias(bias)?;
    let max = (n - lag) as u64;
    let range = k_range.unwrap_or(0..=max);
    if range.is_empty() || *range.end() > max {
        return Err(Error::InvalidArgument(format!(
            "k range {}..={} is not inside 0..={max}",
            range.start(),
            range.end()
        )));
    }
    // Fail on degenerate bias before paying for the exact distribution.
    normalize_statistic(0, n, lag, bias)?;
    let dist = exact_distribution(n, lag, bias)?;
    let rows = range
        .map(|k| {
            let exact = exact_two_sided_p(&dist, k)?;
            let approx = p_value(normalize_statistic(k, n, lag, bias)?)?;
            Ok(ApproximationRow { k, exact, approx, difference: approx - exact })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApproximationTable { n, lag, bias, rows })
}

/// `ln(n!) - ln(sqrt(2 pi n) (n/e)^n)` for integer `n`.
fn stirling_error(n: u64) -> f64 {
    // mpmath, 25 significant digits.
    const TABLE: [f64; 16] = [
        0.0,
        0.081_061_466_795_327_258_22,
        0.041_340_695_955_409_294_09,
        0.027_677_925_684_998_339_15,
        0.020_790_672_103_765_093_11,
        0.016_644_691_189_821_192_16,
        0.013_876_128_823_070_747_99,
        0.011_896_709_945_891_770_10,
        0.010_411_265_261_972_096_50,
        0.009_255_462_182_712_732_918,
        0.008_330_563_433_362_871_256,
        0.007_573_675_487_951_840_795,
        0.006_942_840_107_209_529_866,
        0.006_408_994_188_004_207_068,
        0.005_951_370_112_758_847_736,
        0.005_554_733_551_962_801_371,
    ];
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n < 16 {
        return TABLE[n as usize];
    }
    let x = n as f64;
    let x2 = x * x;
    if n > 500 {
        (S0 - S1 / x2) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / x2) / x2) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / x2) / x2) / x2) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / x2) / x2) / x2) / x2) / x
    }
}

/// Deviance term `x ln(x/m) + m - x`, computed without cancellation when
/// `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                return next;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `P(K = k)` for `K ~ Binomial(trials, p)` via the saddle-point form
/// `exp(stirling terms - deviances) / sqrt(2 pi k (1 - k/trials))`.
pub(crate) fn binomial_pmf(k: u64, trials: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if k > trials {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if k == trials { 1.0 } else { 0.0 };
    }
    let nf = trials as f64;
    if k == 0 {
        return (nf * q.ln()).exp();
    }
    if k == trials {
        return (nf * p.ln()).exp();
    }
    let kf = k as f64;
    let log_core = stirling_error(trials)
        - stirling_error(k)
        - stirling_error(trials - k)
        - deviance(kf, nf * p)
        - deviance(nf - kf, nf * q);
    let log_front = (2.0 * std::f64::consts::PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    (log_core - 0.5 * log_front).exp()
}
