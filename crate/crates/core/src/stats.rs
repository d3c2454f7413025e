//! The bias-aware lag-`l` autocorrelation test.
//!
//! For bits `x_1..x_n` the statistic is `A_l = sum_{i=1}^{n-l} x_i XOR x_{i+l}`.
//! Under independence with `P(x_i = 1) = p`, each XOR term is one with
//! probability `q = 2p(1-p)`, and the test standardises
//!
//! ```text
//! A' = (A_l - q (n-l)) / sqrt((n-l) q (1-q))
//! ```
//!
//! and reports the two-sided p-value `erfc(|A'| / sqrt(2))`.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::bits::BitSequence;
use crate::erfc::erfc_finite;
use crate::{Error, Result};

/// Default significance level.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Below this value of `(n-l) q (1-q)` the normal approximation is flagged.
pub const LOW_SAMPLE_VARIANCE: f64 = 25.0;

/// How the bias `p` of the null hypothesis is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasMode {
    /// Ones-frequency of the sequence under test.
    Estimated,
    /// A known bias in `[0, 1]`.
    Fixed(f64),
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasMode::Estimated => f.write_str("estimated"),
            BiasMode::Fixed(p) => write!(f, "fixed:{p}"),
        }
    }
}

impl FromStr for BiasMode {
    type Err = Error;

    /// Accepts `estimated` or `fixed:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "estimated" {
            return Ok(BiasMode::Estimated);
        }
        let p = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("bias mode `{s}` is not `estimated` or `fixed:<p>`"))
            })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("fixed bias {p} is outside [0, 1]")));
        }
        Ok(BiasMode::Fixed(p))
    }
}

/// Lag, significance level and bias handling for one test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestParams {
    lag: usize,
    alpha: f64,
    bias: BiasMode,
}

impl TestParams {
    pub fn new(lag: usize, alpha: f64, bias: BiasMode) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidArgument("lag must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} is outside (0, 1)")));
        }
        if let BiasMode::Fixed(p) = bias {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("fixed bias {p} is outside [0, 1]")));
            }
        }
        Ok(TestParams { lag, alpha, bias })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bias(&self) -> BiasMode {
        self.bias
    }
}

impl Default for TestParams {
    fn default() -> Self {
        TestParams {
            lag: 1,
            alpha: DEFAULT_ALPHA,
            bias: BiasMode::Estimated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pass,
    Fail,
    /// Zero-variance sequence (bias 0 or 1); no p-value exists.
    Degenerate,
}

impl Verdict {
    /// `Fail` iff `p_value < alpha`; a p-value equal to alpha passes.
    pub fn from_p_value(p_value: f64, alpha: f64) -> Self {
        if p_value < alpha {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "Pass",
            Verdict::Fail => "Fail",
            Verdict::Degenerate => "Degenerate",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Pass" => Ok(Verdict::Pass),
            "Fail" => Ok(Verdict::Fail),
            "Degenerate" => Ok(Verdict::Degenerate),
            other => Err(Error::InvalidArgument(format!("unknown verdict `{other}`"))),
        }
    }
}

/// Full outcome of one autocorrelation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutocorrResult {
    /// Sequence length `n`.
    pub n: usize,
    pub lag: usize,
    /// `A_l`, in `0..=n-lag`.
    pub statistic: u64,
    /// Bias used for the null hypothesis.
    pub bias: f64,
    /// Signed standardised statistic; `None` when degenerate.
    pub normalized: Option<f64>,
    /// Two-sided p-value in `(0, 1]`; `None` when degenerate.
    pub p_value: Option<f64>,
    pub verdict: Verdict,
    /// Set when `(n-l) q (1-q)` is below [`LOW_SAMPLE_VARIANCE`].
    pub low_sample: bool,
}

impl AutocorrResult {
    /// Verdict re-derived at a different significance level.
    pub fn verdict_at(&self, alpha: f64) -> Verdict {
        match self.p_value {
            Some(p) => Verdict::from_p_value(p, alpha),
            None => Verdict::Degenerate,
        }
    }
}

fn check_lag(len: usize, lag: usize) -> Result<()> {
    if lag == 0 || lag >= len {
        return Err(Error::InvalidLag { lag, len });
    }
    Ok(())
}

/// Counts positions `i` in `0..n-lag` with `x_i != x_{i+lag}`.
pub fn autocorr_statistic(seq: &BitSequence, lag: usize) -> Result<u64> {
    check_lag(seq.len(), lag)?;
    let pairs = seq.len() - lag;
    let words = seq.words();
    let word_shift = lag / 64;
    let bit_shift = lag % 64;
    let chunks = pairs.div_ceil(64);
    let tail = pairs % 64;

    let mut count = 0u64;
    for j in 0..chunks {
        let mut shifted = words[j + word_shift] >> bit_shift;
        if bit_shift != 0 {
            if let Some(next) = words.get(j + word_shift + 1) {
                shifted |= next << (64 - bit_shift);
            }
        }
        let mut diff = words[j] ^ shifted;
        if j + 1 == chunks && tail != 0 {
            diff &= (1u64 << tail) - 1;
        }
        count += u64::from(diff.count_ones());
    }
    Ok(count)
}

/// Ones-frequency of the sequence.
pub fn estimate_bias(seq: &BitSequence) -> f64 {
    seq.count_ones() as f64 / seq.len() as f64
}

/// Probability `2p(1-p)` that two independent bits of bias `p` differ.
pub fn xor_probability(bias: f64) -> f64 {
    2.0 * bias * (1.0 - bias)
}

/// Standardises `A` against its null mean `q(n-l)` and the binomial
/// variance `(n-l) q (1-q)`.
pub fn normalize_statistic(statistic: u64, n: usize, lag: usize, bias: f64) -> Result<f64> {
    check_lag(n, lag)?;
    if !(0.0..=1.0).contains(&bias) {
        return Err(Error::InvalidArgument(format!("bias {bias} is outside [0, 1]")));
    }
    let pairs = (n - lag) as f64;
    let q = xor_probability(bias);
    let variance = pairs * q * (1.0 - q);
    if variance <= 0.0 {
        return Err(Error::DegenerateVariance { bias });
    }
    Ok((statistic as f64 - q * pairs) / variance.sqrt())
}

/// Two-sided p-value `erfc(|z| / sqrt(2))`.
///
/// Values that underflow are clamped to `f64::MIN_POSITIVE` so the result
/// stays in `(0, 1]`.
pub fn p_value(normalized: f64) -> Result<f64> {
    if !normalized.is_finite() {
        return Err(Error::InvalidArgument(format!("normalized statistic {normalized} is not finite")));
    }
    Ok(erfc_finite(normalized.abs() / SQRT_2).clamp(f64::MIN_POSITIVE, 1.0))
}

/// Runs the complete test on one sequence.
pub fn run_test(seq: &BitSequence, params: &TestParams) -> Result<AutocorrResult> {
    let n = seq.len();
    let lag = params.lag();
    let statistic = autocorr_statistic(seq, lag)?;
    let bias = match params.bias() {
        BiasMode::Estimated => estimate_bias(seq),
        BiasMode::Fixed(p) => p,
    };
    let q = xor_probability(bias);
    let variance = (n - lag) as f64 * q * (1.0 - q);
    if variance <= 0.0 {
        return Ok(AutocorrResult {
            n,
            lag,
            statistic,
            bias,
            normalized: None,
            p_value: None,
            verdict: Verdict::Degenerate,
            low_sample: true,
        });
    }
    let normalized = normalize_statistic(statistic, n, lag, bias)?;
    let p = p_value(normalized)?;
    Ok(AutocorrResult {
        n,
        lag,
        statistic,
        bias,
        normalized: Some(normalized),
        p_value: Some(p),
        verdict: Verdict::from_p_value(p, params.alpha()),
        low_sample: variance < LOW_SAMPLE_VARIANCE,
    })
}
