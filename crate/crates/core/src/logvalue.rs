//! Non-negative reals stored as natural logarithms.
//!
//! Likelihoods, evidences and weights routinely under- or overflow an `f64`,
//! so every such quantity is carried as its logarithm. `LogValue::ZERO` is
//! `log 0 = -inf`: it absorbs under multiplication and is the identity of
//! log-space addition.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Div, Mul};

#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct LogValue(f64);

impl LogValue {
    pub const ZERO: LogValue = LogValue(f64::NEG_INFINITY);
    pub const ONE: LogValue = LogValue(0.0);

    /// Wraps an already-logarithmic value. NaN is not a valid log-value.
    #[inline]
    pub fn from_ln(log_v: f64) -> Self {
        debug_assert!(!log_v.is_nan(), "NaN log-value");
        LogValue(log_v)
    }

    /// `log(x)` for a non-negative `x`.
    #[inline]
    pub fn from_linear(x: f64) -> Self {
        debug_assert!(x >= 0.0, "negative value {x} has no log representation");
        LogValue(x.ln())
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn exp(self) -> f64 {
        self.0.exp()
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// `x^p` in log space; `0^0` is taken as 1.
    #[inline]
    pub fn powf(self, p: f64) -> Self {
        if p == 0.0 {
            LogValue::ONE
        } else {
            LogValue(self.0 * p)
        }
    }

    #[inline]
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Mul for LogValue {
    type Output = LogValue;
    #[inline]
    fn mul(self, rhs: LogValue) -> LogValue {
        if self.is_zero() || rhs.is_zero() {
            LogValue::ZERO
        } else {
            LogValue(self.0 + rhs.0)
        }
    }
}

impl Div for LogValue {
    type Output = LogValue;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: LogValue) -> LogValue {
        if self.is_zero() {
            LogValue::ZERO
        } else {
            LogValue(self.0 - rhs.0)
        }
    }
}

impl fmt::Debug for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogValue({})", self.0)
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// `log(exp a + exp b)` without overflow or underflow.
#[inline]
pub fn log_add(a: LogValue, b: LogValue) -> LogValue {
    LogValue(log_add_f64(a.0, b.0))
}

#[inline]
pub(crate) fn log_add_f64(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(x_i)`, factoring out the maximum. Empty input gives `log 0`.
pub fn log_sum<I: IntoIterator<Item = LogValue>>(values: I) -> LogValue {
    LogValue(log_sum_f64(values.into_iter().map(|v| v.0)))
}

pub(crate) fn log_sum_f64<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    // Neumaier summation keeps N copies of one value within a few ulps.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let term = (v - max).exp();
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    max + (sum + comp).ln()
}

/// `log(exp a - exp b)` for `a >= b`; returns `log 0` when they are equal.
#[inline]
pub(crate) fn log_sub_f64(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b, "log_sub of a larger value: {a} < {b}");
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == b {
        return f64::NEG_INFINITY;
    }
    a + ln_1m_exp(b - a)
}

/// `log(1 - exp x)` for `x <= 0`.
#[inline]
pub(crate) fn ln_1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
