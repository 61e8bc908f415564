//! Hidden-level sample spaces and the per-unit partition factor.
//!
//! A hidden unit with `s` levels takes values `(2k - s) / s` for `k = 0..=s`,
//! i.e. `s + 1` evenly spaced points of `[-1, +1]`; `s = inf` is the whole
//! interval. Marginalizing one such unit with field `x` gives
//!
//! ```text
//! phi_s(x) = (2 / (s + 1)) * sum_h exp(x h)
//!          = 2 sinh((s + 1) x / s) / ((s + 1) sinh(x / s))     (finite s)
//! phi_inf(x) = 2 sinh(x) / x
//! ```
//!
//! and `psi_s = d/dx ln phi_s` is the conditional mean of the unit.
//! Everything here works with `ln(sinh(y) / y)` and the Langevin function
//! `coth(y) - 1/y`, which stay finite and cancellation-free for all `y`.

use std::f64::consts::LN_2;
use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Number of hidden levels minus one: `s` in `{1, 2, ...} ∪ {inf}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(into = "String")]
pub enum HiddenLevels {
    Finite(NonZeroU32),
    Infinite,
}

impl HiddenLevels {
    pub const BINARY: HiddenLevels = HiddenLevels::Finite(NonZeroU32::MIN);

    pub fn finite(s: u32) -> Result<Self> {
        NonZeroU32::new(s)
            .map(HiddenLevels::Finite)
            .ok_or_else(|| Error::Domain("hidden level count s must be at least 1".into()))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, HiddenLevels::Infinite)
    }

    /// Variance of a hidden value drawn uniformly from the sample space;
    /// this is the slope of `psi` at the origin.
    pub fn uniform_variance(self) -> f64 {
        match self {
            HiddenLevels::Finite(s) => {
                let s = f64::from(s.get());
                (s + 2.0) / (3.0 * s)
            }
            HiddenLevels::Infinite => 1.0 / 3.0,
        }
    }
}

impl fmt::Display for HiddenLevels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HiddenLevels::Finite(s) => write!(f, "{s}"),
            HiddenLevels::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for HiddenLevels {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("inf") {
            return Ok(HiddenLevels::Infinite);
        }
        let s: u32 = text
            .parse()
            .map_err(|_| Error::Domain(format!("invalid hidden level count {text:?}")))?;
        HiddenLevels::finite(s)
    }
}

/// Accepts either an integer (`4`) or a string (`"4"`, `"inf"`).
impl<'de> Deserialize<'de> for HiddenLevels {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Count(n) => u32::try_from(n)
                .map_err(|_| Error::Domain(format!("hidden level count {n} too large")))
                .and_then(HiddenLevels::finite),
            Repr::Text(text) => text.parse(),
        };
        parsed.map_err(D::Error::custom)
    }
}

impl From<HiddenLevels> for String {
    fn from(levels: HiddenLevels) -> String {
        levels.to_string()
    }
}

/// Value of the `k`-th level, `(2k - s) / s`.
#[inline]
pub fn level_value(s: u32, k: u32) -> f64 {
    (2.0 * f64::from(k) - f64::from(s)) / f64::from(s)
}

/// The ordered hidden sample space for finite `s`.
pub fn sample_space(levels: HiddenLevels) -> Result<Vec<f64>> {
    match levels {
        HiddenLevels::Finite(s) => {
            let s = s.get();
            Ok((0..=s).map(|k| level_value(s, k)).collect())
        }
        HiddenLevels::Infinite => Err(Error::Domain(
            "continuous space has no finite enumeration".into(),
        )),
    }
}

/// `ln(sinh(y) / y)` for `y >= 0`.
fn ln_sinhc(y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    if y < 1.0 {
        // sinh(y)/y - 1 = sum_{k>=1} y^{2k} / (2k+1)!
        let y2 = y * y;
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut k = 1.0;
        loop {
            term *= y2 / ((2.0 * k) * (2.0 * k + 1.0));
            sum += term;
            if term <= sum * 1e-17 || term == 0.0 {
                break;
            }
            k += 1.0;
        }
        sum.ln_1p()
    } else {
        ln_sinh(y) - y.ln()
    }
}

/// `ln(sinh(a))` for `a > 0`, without overflow.
pub fn ln_sinh(a: f64) -> f64 {
    debug_assert!(a > 0.0);
    a - LN_2 + (-(-2.0 * a).exp()).ln_1p()
}

/// `ln(2 cosh(a))`, without overflow.
pub fn ln_2cosh(a: f64) -> f64 {
    let a = a.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Langevin function `coth(y) - 1/y`.
fn langevin(y: f64) -> f64 {
    let a = y.abs();
    if a < 0.1 {
        // Odd series with Bernoulli-number coefficients.
        let y2 = y * y;
        y * (1.0 / 3.0
            + y2 * (-1.0 / 45.0
                + y2 * (2.0 / 945.0 + y2 * (-1.0 / 4725.0 + y2 * (2.0 / 93555.0)))))
    } else {
        1.0 / y.tanh() - 1.0 / y
    }
}

fn require_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument must be finite, got {x}")))
    }
}

/// `ln phi_s(x)`.
pub fn log_phi(levels: HiddenLevels, x: f64) -> Result<f64> {
    require_finite(x)?;
    Ok(log_phi_unchecked(levels, x))
}

/// `psi_s(x) = d/dx ln phi_s(x)`, the mean of a hidden unit under field `x`.
pub fn psi(levels: HiddenLevels, x: f64) -> Result<f64> {
    require_finite(x)?;
    Ok(psi_unchecked(levels, x))
}

/// `log_phi` for callers that already guarantee a finite argument.
#[inline]
pub(crate) fn log_phi_unchecked(levels: HiddenLevels, x: f64) -> f64 {
    let a = x.abs();
    match levels {
        HiddenLevels::Finite(s) => {
            let s = f64::from(s.get());
            let inner = a / s;
            if inner >= 1.0 {
                // Both sinh arguments are large: expand ln sinh directly so that
                // (s+1) a / s never has to be formed.
                let outer = inner + a;
                let tail = |y: f64| (-(-2.0 * y).exp()).ln_1p();
                LN_2 + a - (s + 1.0).ln() + tail(outer) - tail(inner)
            } else {
                LN_2 + ln_sinhc((s + 1.0) * inner) - ln_sinhc(inner)
            }
        }
        HiddenLevels::Infinite => LN_2 + ln_sinhc(a),
    }
}

#[inline]
pub(crate) fn psi_unchecked(levels: HiddenLevels, x: f64) -> f64 {
    match levels {
        HiddenLevels::Finite(s) => {
            let s = f64::from(s.get());
            let inner = x / s;
            if inner.abs() >= 1.0 {
                // The 1/y parts of the two Langevin terms cancel exactly; what
                // is left is 1 minus two small exponential tails, which keeps
                // the result monotone and inside [-1, 1] up to saturation.
                let a = inner.abs();
                let tail = |y: f64| {
                    let q = (-2.0 * y).exp();
                    q / (1.0 - q)
                };
                let magnitude = 1.0 - (2.0 / s) * (tail(a) - (s + 1.0) * tail((s + 1.0) * a));
                magnitude.copysign(x)
            } else {
                ((s + 1.0) / s) * langevin(inner * (s + 1.0)) - langevin(inner) / s
            }
        }
        HiddenLevels::Infinite => langevin(x),
    }
}

/// Overflow-safe `ln(sum(exp(values)))`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Streaming log-sum-exp accumulator with a running max shift.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    pub(crate) fn push(&mut self, value: f64) {
        if value <= self.max {
            self.scaled += (value - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - value).exp() + 1.0;
            self.max = value;
        }
    }

    #[cfg(test)]
    pub(crate) fn value(&self) -> f64 {
        self.max + self.scaled.ln()
    }

    pub(crate) fn max(&self) -> f64 {
        self.max
    }

    /// `sum(exp(value - max))`.
    pub(crate) fn scaled_sum(&self) -> f64 {
        self.scaled
    }
}
