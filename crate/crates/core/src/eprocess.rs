//! E-process constructions and the online stopping rule.
//!
//! Every construction multiplies predictable calibrators evaluated at the
//! p-value `1 - Y_t`:
//!
//! ```text
//!     M_0 = 1,    M_t = M_{t-1} · f_t(1 - Y_t)
//! ```
//!
//! where `f_t` depends only on `Y_1, …, Y_{t-1}`. Under the null each factor
//! has conditional mean at most 1, so `M` is a nonnegative supermartingale
//! and `P(sup_t M_t ≥ 1/α) ≤ α`. The detector rejects at the first `t` with
//! `M_t ≥ 1/α`, and optionally gives up when `M_t < β` or after `T` steps.
//!
//! All products are held in the log domain; the average construction keeps
//! one log branch per component and combines them with log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::calibrators::{
    clamp_range, grenander_fit, maximize_mixture_weight, mix, Calibrator, FixedKind,
    MixtureCalibrator, OgVariant, PHistory,
};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::stats::log_add_exp;
use crate::types::{PivotalValue, Status, TokenId, Verdict};
use crate::watermark::{alt_density, derive_uniform, extremal_vector, WatermarkKey};

/// How the per-step calibrator is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Construction {
    /// Fixed mixture weight `λ`.
    Nonadaptive { g: FixedKind, lambda: f64 },
    /// `λ_t` maximizes past log-wealth over `[0, γ]`.
    WeightAdaptive { g: FixedKind, gamma: f64 },
    /// Online Grenander calibrator, optionally clamped into `[a, b]`.
    Og {
        variant: OgVariant,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<(f64, f64)>,
    },
    /// Convex combination of component wealth processes.
    Average { components: Vec<(f64, Construction)> },
}

impl Construction {
    /// Half weight-adaptive with `-log p` and `γ = 1/2`, half OG (EA2).
    pub fn recommended_average() -> Self {
        Construction::Average {
            components: vec![
                (
                    0.5,
                    Construction::WeightAdaptive {
                        g: FixedKind::NegLog,
                        gamma: 0.5,
                    },
                ),
                (
                    0.5,
                    Construction::Og {
                        variant: OgVariant::Ea2,
                        range: None,
                    },
                ),
            ],
        }
    }

    pub fn label(&self) -> String {
        match self {
            Construction::Nonadaptive { g, lambda } => format!("nonadaptive-{}-{lambda}", g.name()),
            Construction::WeightAdaptive { g, .. } => format!("weight-adaptive-{}", g.name()),
            Construction::Og { variant, range } => {
                let v = match variant {
                    OgVariant::Ea => "ea",
                    OgVariant::Ea2 => "ea2",
                };
                match range {
                    Some((a, b)) => format!("og-{v}-[{a},{b}]"),
                    None => format!("og-{v}"),
                }
            }
            Construction::Average { .. } => "average".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Construction::Nonadaptive { lambda, .. } => {
                MixtureCalibrator::new(FixedKind::NegLog, *lambda)?;
            }
            Construction::WeightAdaptive { gamma, .. } => {
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::param("gamma", format!("must lie in (0, 1], got {gamma}")));
                }
            }
            Construction::Og { range, .. } => {
                if let Some((a, b)) = range {
                    if !(*a > 0.0 && *a < 1.0 && *b > 1.0 && b.is_finite()) {
                        return Err(Error::param(
                            "range",
                            format!("need 0 < a < 1 < b < inf, got [{a}, {b}]"),
                        ));
                    }
                }
            }
            Construction::Average { components } => {
                if components.is_empty() {
                    return Err(Error::param("construction", "average needs components"));
                }
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                if components.iter().any(|(w, _)| w.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::param(
                        "weights",
                        "average weights must be positive and sum to 1",
                    ));
                }
                for (_, c) in components {
                    if matches!(c, Construction::Average { .. }) {
                        return Err(Error::param("construction", "averages cannot be nested"));
                    }
                    c.validate()?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Branch {
    Nonadaptive(MixtureCalibrator),
    WeightAdaptive {
        g: FixedKind,
        gamma: f64,
        scores: Vec<f64>,
    },
    Og {
        variant: OgVariant,
        range: Option<(f64, f64)>,
        history: PHistory,
    },
}

impl Branch {
    fn new(c: &Construction) -> Self {
        match c {
            Construction::Nonadaptive { g, lambda } => Branch::Nonadaptive(MixtureCalibrator {
                base: *g,
                lambda: *lambda,
            }),
            Construction::WeightAdaptive { g, gamma } => Branch::WeightAdaptive {
                g: *g,
                gamma: *gamma,
                scores: Vec::new(),
            },
            Construction::Og { variant, range } => Branch::Og {
                variant: *variant,
                range: *range,
                history: PHistory::new(),
            },
            Construction::Average { .. } => unreachable!("averages are flattened"),
        }
    }

    /// The predictable calibrator `f_t`, built from history only.
    fn calibrator(&self) -> Calibrator {
        match self {
            Branch::Nonadaptive(m) => Calibrator::Mixture(*m),
            Branch::WeightAdaptive { g, gamma, scores } => Calibrator::Mixture(MixtureCalibrator {
                base: *g,
                lambda: maximize_mixture_weight(scores, *gamma),
            }),
            Branch::Og {
                variant,
                range,
                history,
            } => {
                let fit = grenander_fit(history, *variant);
                let fit = match range {
                    Some((a, b)) => clamp_range(&fit, *a, *b).expect("range validated"),
                    None => fit,
                };
                Calibrator::Step(fit)
            }
        }
    }

    /// Evaluates `f_t(p)` and then records `p` for later steps.
    fn advance(&mut self, p: f64) -> f64 {
        match self {
            Branch::Nonadaptive(m) => m.value(p),
            Branch::WeightAdaptive { g, gamma, scores } => {
                let lambda = maximize_mixture_weight(scores, *gamma);
                let s = g.value(p);
                scores.push(s);
                mix(lambda, s)
            }
            Branch::Og { .. } => {
                let e = self.calibrator().value(p);
                if let Branch::Og { history, .. } = self {
                    history.push(p);
                }
                e
            }
        }
    }
}

/// One detector step, as written to trace files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: u64,
    pub y: f64,
    pub e_value: f64,
    pub log_m: f64,
    pub verdict: Status,
}

/// Running state of one online test.
#[derive(Debug, Clone)]
pub struct EProcessState {
    construction: Construction,
    branches: Vec<(f64, Branch, f64)>,
    t: u64,
    log_m: f64,
    sup_log_m: f64,
    first_crossing: Option<u64>,
    alpha: f64,
    beta: f64,
    horizon: Option<u64>,
    monitor_only: bool,
    verdict: Verdict,
}

impl EProcessState {
    /// A detector at `t = 0`, `M_0 = 1`.
    pub fn new(construction: Construction, alpha: f64, beta: f64, horizon: Option<u64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::param("beta", format!("must lie in [0, 1), got {beta}")));
        }
        if horizon == Some(0) {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        construction.validate()?;
        let branches = match &construction {
            Construction::Average { components } => components
                .iter()
                .map(|(w, c)| (w.ln(), Branch::new(c), 0.0))
                .collect(),
            c => vec![(0.0, Branch::new(c), 0.0)],
        };
        Ok(Self {
            construction,
            branches,
            t: 0,
            log_m: 0.0,
            sup_log_m: 0.0,
            first_crossing: None,
            alpha,
            beta,
            horizon,
            monitor_only: false,
            verdict: Verdict::running(0.0),
        })
    }

    /// A detector that keeps updating `M` without ever issuing a verdict,
    /// for error curves and growth-rate runs.
    pub fn monitor(construction: Construction, alpha: f64) -> Result<Self> {
        let mut s = Self::new(construction, alpha, 0.0, None)?;
        s.monitor_only = true;
        Ok(s)
    }

    pub fn construction(&self) -> &Construction {
        &self.construction
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn horizon(&self) -> Option<u64> {
        self.horizon
    }

    /// `1/α`.
    pub fn threshold(&self) -> f64 {
        1.0 / self.alpha
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn log_m(&self) -> f64 {
        self.log_m
    }

    /// Log-wealth of each component (one entry unless averaging).
    pub fn component_log_m(&self) -> Vec<f64> {
        self.branches.iter().map(|(_, _, l)| *l).collect()
    }

    pub fn sup_log_m(&self) -> f64 {
        self.sup_log_m
    }

    /// First step with `M_t ≥ 1/α`, tracked in every mode.
    pub fn first_crossing(&self) -> Option<u64> {
        self.first_crossing
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn is_monitor_only(&self) -> bool {
        self.monitor_only
    }

    /// The calibrators that will be applied at the next step, with their
    /// mixture weights.
    pub fn calibrators(&self) -> Vec<(f64, Calibrator)> {
        self.branches
            .iter()
            .map(|(lw, b, _)| (lw.exp(), b.calibrator()))
            .collect()
    }

    /// Processes one pivotal value.
    pub fn step(&mut self, y: PivotalValue) -> Result<StepOutcome> {
        if self.verdict.is_terminal() {
            return Err(Error::Terminated(self.verdict.status.as_str()));
        }
        if let Some(h) = self.horizon {
            if self.t >= h {
                return Err(Error::Terminated("horizon reached"));
            }
        }
        let p = y.p_value();
        self.t += 1;
        let previous = self.log_m;
        let mut combined = f64::NEG_INFINITY;
        let mut last_e = 1.0;
        for (lw, branch, log_m) in self.branches.iter_mut() {
            let e = branch.advance(p);
            *log_m += e.ln();
            combined = log_add_exp(combined, *lw + *log_m);
            last_e = e;
        }
        self.log_m = combined;
        self.sup_log_m = self.sup_log_m.max(combined);
        let e_value = if self.branches.len() == 1 {
            last_e
        } else {
            (combined - previous).exp()
        };

        let crossed = combined >= log_threshold(self.alpha);
        if crossed && self.first_crossing.is_none() {
            self.first_crossing = Some(self.t);
        }
        if self.monitor_only {
            self.verdict.final_log_m = combined;
        } else if crossed {
            self.verdict = Verdict {
                status: Status::Rejected,
                stop_index: Some(self.t),
                final_log_m: combined,
            };
        } else if (self.beta > 0.0 && combined < self.beta.ln()) || self.horizon == Some(self.t) {
            self.verdict = Verdict {
                status: Status::NoRejection,
                stop_index: Some(self.t),
                final_log_m: combined,
            };
        } else {
            self.verdict.final_log_m = combined;
        }
        Ok(StepOutcome {
            t: self.t,
            y: y.get(),
            e_value,
            log_m: combined,
            verdict: self.verdict.status,
        })
    }

    /// Feeds a raw value, validating its domain first.
    pub fn feed(&mut self, y: f64) -> Result<StepOutcome> {
        self.step(PivotalValue::new(y)?)
    }

    /// Computes `Y = U_{step, token}` from the key and feeds it.
    pub fn feed_token(
        &mut self,
        key: &WatermarkKey,
        context: &[TokenId],
        step: u64,
        token: TokenId,
    ) -> Result<StepOutcome> {
        self.feed(derive_uniform(key, context, step, token))
    }

    /// Declares the input exhausted. A running test ends without rejection.
    pub fn finish(&mut self) -> Verdict {
        if self.verdict.status == Status::Running && !self.monitor_only {
            self.verdict = Verdict {
                status: Status::NoRejection,
                stop_index: None,
                final_log_m: self.log_m,
            };
        }
        self.verdict
    }
}

/// `ln(1/α)`, the rejection boundary for `log M_t`.
pub fn log_threshold(alpha: f64) -> f64 {
    (1.0 / alpha).ln()
}

/// Verdict and full log-wealth trajectory of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub verdict: Verdict,
    /// `log M_t` for `t = 0, 1, …`; always starts with 0.
    pub log_m: Vec<f64>,
    pub steps: Vec<StepOutcome>,
}

impl RunResult {
    /// `M_t` on the natural scale.
    pub fn trace(&self) -> Vec<f64> {
        self.log_m.iter().map(|l| l.exp()).collect()
    }
}

/// Runs the online test over `stream` until a verdict fires or the stream
/// ends.
pub fn run<I>(stream: I, construction: Construction, alpha: f64, beta: f64, horizon: Option<u64>) -> Result<RunResult>
where
    I: IntoIterator<Item = PivotalValue>,
{
    let mut state = EProcessState::new(construction, alpha, beta, horizon)?;
    let mut log_m = vec![0.0];
    let mut steps = Vec::new();
    for y in stream {
        let out = state.step(y)?;
        log_m.push(out.log_m);
        steps.push(out);
        if state.verdict().is_terminal() {
            break;
        }
    }
    let verdict = state.finish();
    Ok(RunResult { verdict, log_m, steps })
}

/// `(1/T) log M_T` from a log-wealth trace starting at `t = 0`.
pub fn growth_rate(log_m: &[f64]) -> Result<f64> {
    if log_m.len() < 2 {
        return Err(Error::param("trace", "need at least two entries"));
    }
    let t = (log_m.len() - 1) as f64;
    Ok(log_m[log_m.len() - 1] / t)
}

/// `E[g(1 - Y)]` under the watermarked alternative with `P* = (1-δ, δ, 0, …)`.
pub fn extremal_expected_score(delta: f64, g: FixedKind) -> Result<f64> {
    let p_star = extremal_vector(2, delta)?;
    Ok(quadrature::integrate(|p| alt_density(&p_star, 1.0 - p) * g.value(p), 0.0, 1.0, 1e-10).value)
}

/// `φ(λ) = E[log((1 - λ) + λ g(1 - Y))]` under `P*`.
pub fn extremal_drift(delta: f64, g: FixedKind, lambda: f64) -> Result<f64> {
    let p_star = extremal_vector(2, delta)?;
    Ok(quadrature::integrate(
        |p| alt_density(&p_star, 1.0 - p) * mix(lambda, g.value(p)).ln(),
        0.0,
        1.0,
        1e-10,
    )
    .value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambda0 {
    pub lambda: f64,
    /// `φ(λ)` re-evaluated at the returned weight.
    pub drift: f64,
}

/// A fixed mixture weight with positive worst-case drift over all NTP
/// vectors whose largest entry is at most `1 - δ`.
///
/// Scans `λ = i/1000` for the largest grid point with `φ(λ) > 0` and halves
/// it; concavity of `φ` with `φ(0) = 0` keeps the halved value positive.
pub fn find_lambda0(delta: f64, g: FixedKind) -> Result<Lambda0> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::param("delta", format!("must lie in (0, 1/2], got {delta}")));
    }
    for i in (1..1000).rev() {
        let lam = i as f64 / 1000.0;
        if extremal_drift(delta, g, lam)? > 0.0 {
            let lambda = lam / 2.0;
            let drift = extremal_drift(delta, g, lambda)?;
            if drift > 0.0 {
                return Ok(Lambda0 { lambda, drift });
            }
        }
    }
    Err(Error::NoPositiveLambda(format!(
        "calibrator {} at delta = {delta}",
        g.name()
    )))
}
