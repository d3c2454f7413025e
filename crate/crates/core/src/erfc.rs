//! Complementary error function.
//!
//! Two branches, both accurate to about 1e-15 absolute on the real line:
//!
//! * `|x| <= 2`: the all-positive series
//!   `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_k 2^k x^(2k+1) / (2k+1)!!`,
//!   which has no cancellation, then `erfc = 1 - erf`.
//! * `x > 2`: the Laplace continued fraction
//!   `erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))`
//!   evaluated with the modified Lentz algorithm.
//! * `x < -2`: reflection, `erfc(x) = 2 - erfc(-x)`.

use crate::{Error, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SERIES_LIMIT: f64 = 2.0;
const EPS: f64 = 1e-17;
const MAX_ITER: usize = 10_000;

/// `erfc(x) = 2/sqrt(pi) * integral from x to infinity of exp(-t^2) dt`.
///
/// Non-finite input is rejected. Large positive `x` underflows to `0.0`
/// (beyond roughly `x = 27`).
pub fn erfc(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("erfc argument {x} is not finite")));
    }
    Ok(erfc_finite(x))
}

pub(crate) fn erfc_finite(x: f64) -> f64 {
    if x.abs() <= SERIES_LIMIT {
        1.0 - erf_series(x)
    } else if x > 0.0 {
        erfc_continued_fraction(x)
    } else {
        2.0 - erfc_continued_fraction(-x)
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= 2.0 * x2 / (2.0 * k + 1.0);
        sum += term;
        if term.abs() <= EPS * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..MAX_ITER {
        let a = k as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}
