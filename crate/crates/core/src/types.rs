//! Domain types shared across the crate: next-token probability vectors,
//! token ids, pivotal values and detection verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A next-token prediction distribution over a vocabulary of size `K >= 2`.
///
/// Entries are renormalized on construction, so a vector whose sum is off by
/// a few ulps is accepted and corrected rather than rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    /// Validates and renormalizes `raw`.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::InvalidProbVector(format!(
                "need at least 2 entries, got {}",
                raw.len()
            )));
        }
        if let Some((i, v)) = raw
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidProbVector(format!(
                "entry {i} is {v}; entries must be finite and nonnegative"
            )));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidProbVector("entries sum to zero".into()));
        }
        let mut probs = raw;
        if sum != 1.0 {
            for p in probs.iter_mut() {
                *p /= sum;
            }
        }
        Ok(Self { probs })
    }

    /// The uniform distribution over `k` tokens.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// True when exactly one token carries positive mass.
    pub fn is_degenerate(&self) -> bool {
        self.probs.iter().filter(|&&p| p > 0.0).count() == 1
    }

    /// Shannon entropy in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Membership in the set of vectors whose largest entry is at most
    /// `1 - delta`.
    pub fn in_delta_simplex(&self, delta: f64) -> Result<bool> {
        let k = self.len() as f64;
        if !(delta > 0.0 && delta <= 1.0 - 1.0 / k) {
            return Err(Error::param(
                "delta",
                format!("must lie in (0, 1 - 1/K] = (0, {}], got {delta}", 1.0 - 1.0 / k),
            ));
        }
        Ok(self.max_prob() <= 1.0 - delta)
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        ProbVector::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Shorthand for [`ProbVector::new`].
pub fn make_prob_vector(raw: Vec<f64>) -> Result<ProbVector> {
    ProbVector::new(raw)
}

/// Index of a token in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

/// The pivotal statistic `Y = U_W`, a value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct PivotalValue(f64);

impl PivotalValue {
    pub fn new(y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::param("y", format!("must lie in [0, 1], got {y}")));
        }
        Ok(Self(y))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// The p-value `1 - y` fed to calibrators.
    pub fn p_value(self) -> f64 {
        1.0 - self.0
    }
}

impl<'de> Deserialize<'de> for PivotalValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let y = f64::deserialize(d)?;
        PivotalValue::new(y).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Rejected,
    NoRejection,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Rejected => "rejected",
            Status::NoRejection => "no rejection",
        }
    }
}

/// Outcome of an online test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    /// Step at which the decision fired, if any.
    pub stop_index: Option<u64>,
    pub final_log_m: f64,
}

impl Verdict {
    pub fn running(log_m: f64) -> Self {
        Self {
            status: Status::Running,
            stop_index: None,
            final_log_m: log_m,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.status != Status::Running
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_and_flags_degenerate() {
        let p = make_prob_vector(vec![2.0, 2.0]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        assert!(!p.is_degenerate());

        let d = make_prob_vector(vec![1.0, 0.0]).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0]);
        assert!(d.is_degenerate());

        let q = make_prob_vector(vec![0.2, 0.3, 0.5]).unwrap();
        for (a, b) in q.probs().iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(make_prob_vector(vec![1.0]).is_err());
        assert!(make_prob_vector(vec![0.5, -0.1, 0.6]).is_err());
        assert!(make_prob_vector(vec![f64::NAN, 1.0]).is_err());
        assert!(make_prob_vector(vec![0.0, 0.0]).is_err());
        assert!(make_prob_vector(vec![f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let p = make_prob_vector(vec![0.5, 0.5]).unwrap();
        assert!((p.entropy() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(make_prob_vector(vec![1.0, 0.0]).unwrap().entropy(), 0.0);
        let q = make_prob_vector(vec![0.9, 0.1]).unwrap();
        // -(0.9 ln 0.9 + 0.1 ln 0.1)
        assert!((q.entropy() - 0.325_082_973_391_448_2).abs() < 1e-12);
    }

    #[test]
    fn delta_simplex_membership() {
        let half = make_prob_vector(vec![0.5, 0.5]).unwrap();
        assert!(half.in_delta_simplex(0.2).unwrap());
        assert!(!make_prob_vector(vec![0.9, 0.1])
            .unwrap()
            .in_delta_simplex(0.2)
            .unwrap());
        assert!(make_prob_vector(vec![0.8, 0.2])
            .unwrap()
            .in_delta_simplex(0.2)
            .unwrap());
        assert!(half.in_delta_simplex(0.0).is_err());
        assert!(half.in_delta_simplex(0.6).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let p: ProbVector = serde_json::from_str("[1, 3]").unwrap();
        assert_eq!(p.probs(), &[0.25, 0.75]);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[0.25,0.75]");
        assert!(serde_json::from_str::<ProbVector>("[1]").is_err());
        assert!(serde_json::from_str::<PivotalValue>("1.5").is_err());
    }
}
