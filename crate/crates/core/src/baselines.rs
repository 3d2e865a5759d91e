//! Sum-of-scores baselines with exact fixed-length null thresholds.
//!
//! Under the null each `h_ars(Y) = -ln(1 - Y)` is Exp(1), so the length-`T` sum is
//! Gamma(T, 1); `-h_log(Y)` has the same law. Both tests reject when the running
//! sum reaches the threshold returned by [`null_threshold`].

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::types::PivotalValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Score {
    Ars,
    Log,
}

impl Score {
    pub fn name(self) -> &'static str {
        match self {
            Score::Ars => "ars",
            Score::Log => "log",
        }
    }

    pub fn h(self, y: f64) -> f64 {
        match self {
            Score::Ars => -(-y).ln_1p(),
            Score::Log => y.ln(),
        }
    }
}

impl std::str::FromStr for Score {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ars" => Ok(Score::Ars),
            "log" => Ok(Score::Log),
            "gum" => Err(Error::NotImplemented("gum: not implemented — external reference")),
            other => Err(Error::param("score", format!("unknown score `{other}` (expected ars|log)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumMode {
    FixedT,
    SequentialMonitor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumTestConfig {
    pub score: Score,
    pub alpha: f64,
    pub mode: SumMode,
}

impl SumTestConfig {
    pub fn new(score: Score, alpha: f64, mode: SumMode) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { score, alpha, mode })
    }

    /// Index (1-based) at which the test rejects, if any. `FixedT` looks only at
    /// the full stream; `SequentialMonitor` at every prefix.
    pub fn decide(&self, ys: &[PivotalValue]) -> Result<Option<u64>> {
        match self.mode {
            SumMode::FixedT => {
                if ys.is_empty() {
                    return Ok(None);
                }
                let thr = null_threshold(self.score, ys.len() as u64, self.alpha)?;
                Ok((sum_score(ys, self.score) >= thr).then_some(ys.len() as u64))
            }
            SumMode::SequentialMonitor => sequential_monitor(ys, self.score, self.alpha),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

pub fn sum_score(ys: &[PivotalValue], score: Score) -> f64 {
    ys.iter().map(|y| score.h(y.get())).sum()
}

/// Lower-`q` quantile of Gamma(shape, 1), found by bisection to absolute tolerance 1e-10.
pub fn gamma_quantile(shape: f64, q: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::param("shape", format!("must be positive, got {shape}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param("q", format!("must lie in (0, 1), got {q}")));
    }
    // Work on whichever tail is small so that neither side loses precision.
    let upper = q > 0.5;
    let target = if upper { 1.0 - q } else { q };
    let tail = |x: f64| if upper { gamma_ur(shape, x) } else { gamma_lr(shape, x) };
    let below = |x: f64| if upper { tail(x) > target } else { tail(x) < target };

    let mut lo = 0.0;
    let mut hi = shape.max(1.0);
    while below(hi) {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rejection threshold for the length-`t` sum at level `alpha`: reject when the sum
/// is at least this value.
pub fn null_threshold(score: Score, t: u64, alpha: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::param("T", "must be at least 1"));
    }
    check_alpha(alpha)?;
    let shape = t as f64;
    match score {
        Score::Ars => gamma_quantile(shape, 1.0 - alpha),
        Score::Log => Ok(-gamma_quantile(shape, alpha)?),
    }
}

/// Thresholds for prefix lengths `1..=len`, cached for repeated monitoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    score: Score,
    alpha: f64,
    thresholds: Vec<f64>,
}

impl ThresholdTable {
    pub fn new(score: Score, alpha: f64, len: u64) -> Result<Self> {
        let thresholds = (1..=len)
            .map(|t| null_threshold(score, t, alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            score,
            alpha,
            thresholds,
        })
    }

    pub fn score(&self) -> Score {
        self.score
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Threshold at prefix length `t` (1-based).
    pub fn get(&self, t: u64) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.thresholds.get(i as usize)).copied()
    }

    /// Running sums paired with per-prefix rejection flags.
    pub fn scan(&self, ys: &[f64]) -> Vec<(f64, bool)> {
        let mut s = 0.0;
        ys.iter()
            .zip(&self.thresholds)
            .map(|(&y, &thr)| {
                s += self.score.h(y);
                (s, s >= thr)
            })
            .collect()
    }
}

/// Apply the fixed-length test at every prefix and report the first rejection.
pub fn sequential_monitor(ys: &[PivotalValue], score: Score, alpha: f64) -> Result<Option<u64>> {
    check_alpha(alpha)?;
    let mut s = 0.0;
    for (i, y) in ys.iter().enumerate() {
        s += score.h(y.get());
        let t = i as u64 + 1;
        if s >= null_threshold(score, t, alpha)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}
