//! Independent reference implementations shared by the integration suites.

#![allow(dead_code)]

use ewmark_core::calibrators::{OgVariant, StepCalibrator};
use ewmark_core::quadrature::integrate;
use ewmark_core::ProbVector;
use rand::Rng;

/// Weighted Grenander fit computed geometrically: walk the cumulative-weight
/// diagram from the origin, always jumping to the point of steepest slope
/// (farthest point on ties). Quadratic time.
pub fn lcm_reference(ps: &[f64], variant: OgVariant) -> (Vec<f64>, Vec<f64>) {
    let mut pts: Vec<(f64, f64)> = ps.iter().map(|&p| (p, 1.0)).collect();
    match variant {
        OgVariant::Ea => pts.push((1.0, 1.0)),
        OgVariant::Ea2 => {
            pts.push((0.0, 0.5));
            pts.push((1.0, 0.5));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();

    // Vertices (x, cumulative weight at x); mass at 0 is attributed to the
    // first positive location, so the diagram starts at the origin.
    let mut verts = vec![(0.0, 0.0)];
    let mut cum = 0.0;
    for (i, &(x, w)) in pts.iter().enumerate() {
        cum += w;
        let last_at_x = i + 1 == pts.len() || pts[i + 1].0 != x;
        if x > 0.0 && last_at_x {
            verts.push((x, cum));
        }
    }

    let mut breaks = Vec::new();
    let mut heights = Vec::new();
    let mut i = 0;
    while i + 1 < verts.len() {
        let (x0, c0) = verts[i];
        let mut best = i + 1;
        let mut best_slope = (verts[best].1 - c0) / (verts[best].0 - x0);
        for (j, &(x, c)) in verts.iter().enumerate().skip(i + 2) {
            let s = (c - c0) / (x - x0);
            if s >= best_slope {
                best = j;
                best_slope = s;
            }
        }
        breaks.push(verts[best].0);
        heights.push(best_slope / total);
        i = best;
    }
    (breaks, heights)
}

/// Merges adjacent pieces whose heights agree to `rel` relative tolerance.
pub fn canonical(breaks: &[f64], heights: &[f64], rel: f64) -> (Vec<f64>, Vec<f64>) {
    let mut b: Vec<f64> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for (&x, &y) in breaks.iter().zip(heights) {
        if let Some(&last) = h.last() {
            if (last - y).abs() <= rel * last.abs().max(y.abs()) {
                *b.last_mut().unwrap() = x;
                continue;
            }
        }
        b.push(x);
        h.push(y);
    }
    (b, h)
}

/// Whether a fitted step calibrator equals the geometric reference.
pub fn matches_reference(fit: &StepCalibrator, ps: &[f64], variant: OgVariant, tol: f64) -> Result<(), String> {
    let (rb, rh) = lcm_reference(ps, variant);
    let (rb, rh) = canonical(&rb, &rh, tol);
    let (fb, fh) = canonical(&fit.breakpoints, &fit.heights, tol);
    if rb.len() != fb.len() {
        return Err(format!("piece count {} vs reference {}", fb.len(), rb.len()));
    }
    for (k, ((a, b), (c, d))) in fb.iter().zip(&fh).zip(rb.iter().zip(&rh)).enumerate() {
        if (a - c).abs() > tol || (b - d).abs() > tol * d.abs().max(1.0) {
            return Err(format!("piece {k}: ({a}, {b}) vs reference ({c}, {d})"));
        }
    }
    Ok(())
}

/// Grid search for `argmax Σ log(1 - λ + λ s)` over `n + 1` points in `[0, gamma]`.
pub fn grid_lambda(scores: &[f64], gamma: f64, n: usize) -> f64 {
    let obj = |l: f64| scores.iter().map(|s| (1.0 - l + l * s).ln()).sum::<f64>();
    let mut best = (0.0, obj(0.0));
    for i in 1..=n {
        let l = gamma * i as f64 / n as f64;
        let v = obj(l);
        if v > best.1 {
            best = (l, v);
        }
    }
    best.0
}

/// `q`-quantile of Gamma(shape, 1) from the density alone: the normalizing
/// constant and both tails are obtained by quadrature, and the quantile by
/// bisection on the resulting CDF.
pub fn gamma_quantile_reference(shape: f64, q: f64) -> f64 {
    let m = (shape - 1.0).max(0.0);
    let log_peak = if m > 0.0 { m * m.ln() - m } else { 0.0 };
    let dens = move |x: f64| {
        if x <= 0.0 {
            return if shape == 1.0 { (-log_peak).exp() } else { 0.0 };
        }
        ((shape - 1.0) * x.ln() - x - log_peak).exp()
    };
    let spread = 40.0 * shape.sqrt() + 40.0;
    let lo = (shape - spread).max(0.0);
    let hi = shape + spread;
    let total = integrate(dens, lo, shape, 1e-14).value + integrate(dens, shape, hi, 1e-14).value;
    let upper = q > 0.5;
    let target = if upper { 1.0 - q } else { q };
    let tail = |x: f64| {
        if upper {
            integrate(dens, x, hi, 1e-15).value / total
        } else {
            integrate(dens, lo, x, 1e-15).value / total
        }
    };
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let below = if upper { tail(mid) > target } else { tail(mid) < target };
        if below {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-13 * b.max(1.0) {
            break;
        }
    }
    0.5 * (a + b)
}

/// A random point of `Δ_K^δ`: normalized uniforms, pulled toward the uniform
/// vector just enough to respect the cap when they exceed it.
pub fn random_capped<R: Rng>(k: usize, delta: f64, rng: &mut R) -> ProbVector {
    let mut raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(4)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|x| *x /= s);
    let cap = 1.0 - delta;
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > cap {
        let u = 1.0 / k as f64;
        let t = (cap - u) / (max - u);
        raw.iter_mut().for_each(|x| *x = t * *x + (1.0 - t) * u);
    }
    ProbVector::new(raw).unwrap()
}

/// Normalized uniforms over `k` tokens.
pub fn random_prob<R: Rng>(k: usize, rng: &mut R) -> ProbVector {
    ProbVector::new((0..k).map(|_| rng.random::<f64>()).collect()).unwrap()
}
