//! Poisson window bounds.
//!
//! With faults arriving at rate λ, the number landing in a window of length
//! T is Poisson with mean x = λT, so
//!
//! ```text
//! P(N >= 2) = 1 - e^-x (1 + x)
//! ```
//!
//! Only the product λT matters, which is why the bound does not depend on
//! where the window starts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("rate must be finite and >= 0, got {0}")]
    Rate(f64),
    #[error("window must be finite and >= 0, got {0}")]
    Window(f64),
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(f64),
    #[error("{name} must be finite and > 0, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("commit fraction must be finite and >= 0, got {0}")]
    CommitFraction(f64),
    #[error(
        "window of {window:.3} instructions leaves no room for a quantum; lower the rate or raise epsilon"
    )]
    QuantumTooSmall { window: f64 },
}

/// Probability of two or more events when the expected count is `x`.
pub fn p_multi_mean(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1.0 {
        // Positive tail series; avoids cancellation in 1 - (1 - x²/2 ...).
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        let mut k = 2.0;
        while term > sum * 1e-17 {
            sum += term;
            k += 1.0;
            term *= x / k;
        }
        sum * (-x).exp()
    } else {
        // The exact value is below 1 for every finite x; round down rather
        // than let large means collapse to 1.0.
        (1.0 - (-x).exp() * (1.0 + x)).min(BELOW_ONE)
    }
}

/// Largest double below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `P(N >= 2)` for rate `rate` over a window of length `window`.
pub fn p_multi(rate: f64, window: f64) -> Result<f64, IntervalError> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(IntervalError::Rate(rate));
    }
    if !(window.is_finite() && window >= 0.0) {
        return Err(IntervalError::Window(window));
    }
    Ok(p_multi_mean(rate * window))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxInterval {
    Finite(f64),
    /// A zero rate never produces two faults.
    Unbounded,
}

impl MaxInterval {
    pub fn finite(self) -> Option<f64> {
        match self {
            MaxInterval::Finite(t) => Some(t),
            MaxInterval::Unbounded => None,
        }
    }
}

/// Largest mean `x` with `p_multi_mean(x) <= epsilon`, to relative 1e-9.
pub fn max_mean(epsilon: f64) -> Result<f64, IntervalError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(IntervalError::Epsilon(epsilon));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while p_multi_mean(hi) <= epsilon {
        if hi > f64::MAX / 4.0 {
            // Only epsilon within an ulp of 1 gets here.
            return Ok(hi);
        }
        lo = hi;
        hi *= 2.0;
    }
    // Shrink hi from above so small epsilon does not start with a huge gap.
    while lo == 0.0 && p_multi_mean(hi / 2.0) > epsilon {
        hi /= 2.0;
    }
    lo = lo.max(hi / 2.0);
    while (hi - lo) > 1e-9 * hi {
        let mid = lo + (hi - lo) / 2.0;
        if p_multi_mean(mid) <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Longest window whose probability of two or more faults stays within
/// `epsilon`.
pub fn max_interval(rate: f64, epsilon: f64) -> Result<MaxInterval, IntervalError> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(IntervalError::Rate(rate));
    }
    let x = max_mean(epsilon)?;
    if rate == 0.0 {
        return Ok(MaxInterval::Unbounded);
    }
    let mut t = x / rate;
    // Division can round the product back over the bound.
    while p_multi_mean(rate * t) > epsilon {
        t = t.next_down();
    }
    Ok(MaxInterval::Finite(t))
}

/// Quantum that fits a whole treatment window, two runs plus the
/// verification/commit phase, into `t_max`:
///
/// ```text
/// Q = floor(t_max * ips / (2 + commit_fraction))
/// ```
///
/// `commit_fraction` is the verify/commit cost as a fraction of Q.
pub fn quantum_from_interval(
    t_max: f64,
    ips: f64,
    commit_fraction: f64,
) -> Result<u64, IntervalError> {
    for (name, value) in [("t_max", t_max), ("ips", ips)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(IntervalError::NotPositive { name, value });
        }
    }
    if !(commit_fraction.is_finite() && commit_fraction >= 0.0) {
        return Err(IntervalError::CommitFraction(commit_fraction));
    }
    let window = t_max * ips;
    let q = (window / (2.0 + commit_fraction)).floor();
    if q < 1.0 {
        return Err(IntervalError::QuantumTooSmall { window });
    }
    Ok(q.min(u64::MAX as f64) as u64)
}

/// Answer to an interval query, as printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub rate: f64,
    pub epsilon: f64,
    pub ips: f64,
    pub commit_fraction: f64,
    pub t_max: MaxInterval,
    pub window_instructions: Option<f64>,
    pub quantum: Option<u64>,
}

pub fn interval_report(
    rate: f64,
    epsilon: f64,
    ips: f64,
    commit_fraction: f64,
) -> Result<IntervalReport, IntervalError> {
    let t_max = max_interval(rate, epsilon)?;
    let (window_instructions, quantum) = match t_max {
        MaxInterval::Finite(t) => (
            Some(t * ips),
            Some(quantum_from_interval(t, ips, commit_fraction)?),
        ),
        MaxInterval::Unbounded => (None, None),
    };
    Ok(IntervalReport {
        rate,
        epsilon,
        ips,
        commit_fraction,
        t_max,
        window_instructions,
        quantum,
    })
}
