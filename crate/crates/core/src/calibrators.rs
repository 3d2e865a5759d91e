//! p-to-e calibrators: decreasing densities on `[0, 1]`.
//!
//! Three shapes are supported: the closed-form [`FixedKind`] calibrators,
//! mixtures `(1 - λ) + λ g` of one of them with the constant 1, and
//! left-continuous step functions produced by the online Grenander fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to p-values before evaluating calibrators that diverge at 0.
pub const P_MIN: f64 = 1e-300;

/// Closed-form calibrators, each integrating to exactly 1 on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedKind {
    /// `2 (1 - p)`
    Linear,
    /// `p^{-1/2} - 1`
    SqrtInv,
    /// `-log p`
    NegLog,
    /// `(1 - p + p log p) / (p (log p)^2)`
    #[serde(rename = "vs")]
    VovkSellke,
}

impl FixedKind {
    pub const ALL: [FixedKind; 4] = [
        FixedKind::Linear,
        FixedKind::SqrtInv,
        FixedKind::NegLog,
        FixedKind::VovkSellke,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixedKind::Linear => "linear",
            FixedKind::SqrtInv => "sqrtinv",
            FixedKind::NegLog => "neglog",
            FixedKind::VovkSellke => "vs",
        }
    }

    /// Evaluates the calibrator. Inputs are clamped to `[P_MIN, 1]`.
    #[inline]
    pub fn value(self, p: f64) -> f64 {
        let p = p.clamp(P_MIN, 1.0);
        match self {
            FixedKind::Linear => 2.0 * (1.0 - p),
            FixedKind::SqrtInv => 1.0 / p.sqrt() - 1.0,
            FixedKind::NegLog => -p.ln(),
            FixedKind::VovkSellke => {
                let e = 1.0 - p;
                if e < 1e-3 {
                    // Taylor expansion about p = 1; the closed form cancels.
                    0.5 + e * (1.0 / 6.0 + e * (1.0 / 8.0 + e * (19.0 / 180.0 + e * 3.0 / 32.0)))
                } else {
                    let l = p.ln();
                    (e + p * l) / (p * l * l)
                }
            }
        }
    }

    /// `∫_0^p g(u) du` in closed form.
    pub fn cumulative(self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            FixedKind::Linear => 2.0 * p - p * p,
            FixedKind::SqrtInv => 2.0 * p.sqrt() - p,
            FixedKind::NegLog => {
                if p == 0.0 {
                    0.0
                } else {
                    p - p * p.ln()
                }
            }
            FixedKind::VovkSellke => {
                if p == 0.0 {
                    0.0
                } else if 1.0 - p < 1e-8 {
                    1.0
                } else {
                    (p - 1.0) / p.ln()
                }
            }
        }
    }
}

impl std::str::FromStr for FixedKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(FixedKind::Linear),
            "sqrtinv" => Ok(FixedKind::SqrtInv),
            "neglog" => Ok(FixedKind::NegLog),
            "vs" | "vovk-sellke" => Ok(FixedKind::VovkSellke),
            other => Err(Error::param(
                "calibrator",
                format!("unknown calibrator `{other}` (expected linear|sqrtinv|neglog|vs)"),
            )),
        }
    }
}

/// Checked evaluation of a fixed calibrator.
pub fn eval_fixed(kind: FixedKind, p: f64) -> Result<f64> {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(Error::param("p", format!("must lie in [0, 1], got {p}")));
    }
    Ok(kind.value(p))
}

/// `(1 - λ) + λ g(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureCalibrator {
    pub base: FixedKind,
    pub lambda: f64,
}

impl MixtureCalibrator {
    pub fn new(base: FixedKind, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param("lambda", format!("must lie in [0, 1], got {lambda}")));
        }
        Ok(Self { base, lambda })
    }

    #[inline]
    pub fn value(&self, p: f64) -> f64 {
        mix(self.lambda, self.base.value(p))
    }
}

#[inline]
pub(crate) fn mix(lambda: f64, g: f64) -> f64 {
    (1.0 - lambda) + lambda * g
}

/// Left-continuous, weakly decreasing step density on `[0, 1]`.
///
/// Piece `i` covers `(breakpoints[i-1], breakpoints[i]]` (with an implicit
/// left end of 0 for the first piece) and has height `heights[i]`. The last
/// breakpoint is 1. The value at 0 is the first height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCalibrator {
    pub breakpoints: Vec<f64>,
    pub heights: Vec<f64>,
}

impl StepCalibrator {
    pub fn constant_one() -> Self {
        Self {
            breakpoints: vec![1.0],
            heights: vec![1.0],
        }
    }

    #[inline]
    pub fn value(&self, p: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b < p);
        self.heights[i.min(self.heights.len() - 1)]
    }

    pub fn integral(&self) -> f64 {
        let mut left = 0.0;
        let mut total = 0.0;
        for (&b, &h) in self.breakpoints.iter().zip(&self.heights) {
            total += (b - left) * h;
            left = b;
        }
        total
    }

    pub fn is_decreasing(&self) -> bool {
        self.heights.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }
}

/// Any of the calibrator shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    Fixed { g: FixedKind },
    Mixture(MixtureCalibrator),
    Step(StepCalibrator),
}

impl Calibrator {
    pub fn value(&self, p: f64) -> f64 {
        match self {
            Calibrator::Fixed { g } => g.value(p),
            Calibrator::Mixture(m) => m.value(p),
            Calibrator::Step(s) => s.value(p),
        }
    }
}

/// Observed p-values `p_s = 1 - Y_s`, kept sorted with ties merged into
/// weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PHistory {
    points: Vec<(f64, f64)>,
    count: usize,
}

impl PHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_p_values(ps: &[f64]) -> Self {
        let mut h = Self::new();
        for &p in ps {
            h.push(p);
        }
        h
    }

    /// Adds one observation with unit weight.
    pub fn push(&mut self, p: f64) {
        self.push_weighted(p, 1.0);
        self.count += 1;
    }

    fn push_weighted(&mut self, p: f64, w: f64) {
        let p = p.clamp(0.0, 1.0);
        match self.points.binary_search_by(|(x, _)| x.total_cmp(&p)) {
            Ok(i) => self.points[i].1 += w,
            Err(i) => self.points.insert(i, (p, w)),
        }
    }

    /// Number of real observations.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Distinct values with their weights, ascending.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Which pseudo-observations anchor the Grenander fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OgVariant {
    /// One pseudo p-value at 1 with unit weight.
    Ea,
    /// Pseudo p-values at 0 and 1, each with weight 1/2.
    Ea2,
}

impl std::str::FromStr for OgVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ea" => Ok(OgVariant::Ea),
            "ea2" => Ok(OgVariant::Ea2),
            other => Err(Error::param(
                "og-variant",
                format!("unknown variant `{other}` (expected ea|ea2)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    left: f64,
    right: f64,
    mass: f64,
}

impl Block {
    fn width(&self) -> f64 {
        self.right - self.left
    }
}

/// Weighted Grenander estimator of the p-values in `history`, augmented with
/// the variant's pseudo-observations.
///
/// Pool-adjacent-violators on the ECDF increments: segment slopes
/// `mass / width` are pooled until they are strictly decreasing. A point
/// mass at `p = 0` is folded into the first segment, which makes the
/// estimate continuous at 0.
pub fn grenander_fit(history: &PHistory, variant: OgVariant) -> StepCalibrator {
    let mut augmented = history.clone();
    match variant {
        OgVariant::Ea => augmented.push_weighted(1.0, 1.0),
        OgVariant::Ea2 => {
            augmented.push_weighted(0.0, 0.5);
            augmented.push_weighted(1.0, 0.5);
        }
    }
    let total: f64 = augmented.points.iter().map(|(_, w)| w).sum();

    let mut blocks: Vec<Block> = Vec::with_capacity(augmented.points.len());
    let mut left = 0.0;
    let mut carry = 0.0;
    for &(x, w) in &augmented.points {
        if x <= 0.0 {
            carry += w;
            continue;
        }
        let mut cur = Block {
            left,
            right: x,
            mass: w + carry,
        };
        carry = 0.0;
        left = x;
        while let Some(prev) = blocks.last() {
            // prev slope <= cur slope  <=>  violator (or tie): pool.
            if prev.mass * cur.width() <= cur.mass * prev.width() {
                cur = Block {
                    left: prev.left,
                    right: cur.right,
                    mass: prev.mass + cur.mass,
                };
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(cur);
    }

    StepCalibrator {
        breakpoints: blocks.iter().map(|b| b.right).collect(),
        heights: blocks.iter().map(|b| b.mass / (b.width() * total)).collect(),
    }
}

/// Clamps the heights of `f` into `[a, b]` while keeping unit mass.
///
/// Finds the scale `c` with `∫ clamp(c f, a, b) = 1` by bisection; this is
/// the fixed point of alternately clamping and rescaling. It approximates
/// (but is not) the range-constrained maximum-likelihood fit.
pub fn clamp_range(f: &StepCalibrator, a: f64, b: f64) -> Result<StepCalibrator> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::param("range", format!("lower bound must lie in (0, 1), got {a}")));
    }
    if !(b > 1.0 && b.is_finite()) {
        return Err(Error::param("range", format!("upper bound must exceed 1, got {b}")));
    }
    if f.heights.iter().all(|&h| (a..=b).contains(&h)) {
        return Ok(f.clone());
    }
    let widths: Vec<f64> = std::iter::once(0.0)
        .chain(f.breakpoints.iter().copied())
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    let mass = |c: f64| -> f64 {
        widths
            .iter()
            .zip(&f.heights)
            .map(|(w, h)| w * (c * h).clamp(a, b))
            .sum()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut guard = 0;
    while mass(hi) < 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::param("range", "cannot reach unit mass within the range"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut heights: Vec<f64> = f.heights.iter().map(|h| (hi * h).clamp(a, b)).collect();
    // Spread the residual rounding error over the unclamped pieces.
    let total: f64 = widths.iter().zip(&heights).map(|(w, h)| w * h).sum();
    let free: f64 = widths
        .iter()
        .zip(&heights)
        .filter(|(_, &h)| h > a && h < b)
        .map(|(w, _)| w)
        .sum();
    if free > 0.0 {
        let shift = (1.0 - total) / free;
        for h in heights.iter_mut().filter(|h| **h > a && **h < b) {
            *h += shift;
        }
    }
    Ok(StepCalibrator {
        breakpoints: f.breakpoints.clone(),
        heights,
    })
}

/// Maximizes `Σ log((1 - λ) + λ s)` over `λ ∈ [0, gamma]` for calibrated
/// scores `s = g(p)`.
///
/// The objective is concave; the boundary is returned when the derivative
/// sign at an endpoint already decides the answer, otherwise golden-section
/// search runs to absolute tolerance 1e-6.
pub fn maximize_mixture_weight(scores: &[f64], gamma: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let slope_at = |lam: f64| -> f64 { scores.iter().map(|s| (s - 1.0) / mix(lam, *s)).sum() };
    if slope_at(0.0) <= 0.0 {
        return 0.0;
    }
    if slope_at(gamma) >= 0.0 {
        return gamma;
    }
    let objective = |lam: f64| -> f64 { scores.iter().map(|s| mix(lam, *s).ln()).sum() };
    golden_section_max(objective, 0.0, gamma, 1e-6)
}

/// `λ_t` for a mixture with calibrator `g` fitted to past p-values.
pub fn adaptive_lambda(p_values: &[f64], g: FixedKind, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param("gamma", format!("must lie in (0, 1], got {gamma}")));
    }
    let scores: Vec<f64> = p_values.iter().map(|&p| g.value(p)).collect();
    Ok(maximize_mixture_weight(&scores, gamma))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`;
/// the endpoints are compared against the interior estimate.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best.0
}
