//! Gumbel-max watermarking: key-derived pseudo-uniform vectors, the decoder,
//! the pivotal statistic and the exact distribution of that statistic under
//! the watermarked alternative.
//!
//! For a next-token distribution `P` and a vector `ζ = (U_1, …, U_K)` of
//! uniforms, the decoder picks
//!
//! ```text
//!     S(P, ζ) = argmax_w  log(U_w) / P_w
//! ```
//!
//! which is distributed exactly as `Cat(P)` when `ζ` is uniform. The pivotal
//! statistic `Y = U_W` is uniform when the token is independent of `ζ` and has
//! CDF `F^P(y) = Σ P_w y^{1/P_w}` when the token was chosen by the decoder.

use std::hash::Hasher;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use siphasher::sip128::{Hasher128, SipHasher13};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::types::{PivotalValue, ProbVector, TokenId};

const KEY_DOMAIN: (u64, u64) = (0x6577_6d61_726b_2d6b, 0x6579_2d64_6572_6976);

/// Shared secret from which per-step uniforms are reconstructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkKey {
    key_bytes: Vec<u8>,
    context_window: usize,
    sip: (u64, u64),
}

impl WatermarkKey {
    pub fn new(key_bytes: impl Into<Vec<u8>>, context_window: usize) -> Result<Self> {
        let key_bytes = key_bytes.into();
        if key_bytes.is_empty() {
            return Err(Error::param("key", "key bytes must be nonempty"));
        }
        let mut h = SipHasher13::new_with_keys(KEY_DOMAIN.0, KEY_DOMAIN.1);
        h.write(&key_bytes);
        let d = h.finish128();
        Ok(Self {
            key_bytes,
            context_window,
            sip: (d.h1, d.h2),
        })
    }

    /// Parses a hex-encoded key.
    pub fn from_hex(hex: &str, context_window: usize) -> Result<Self> {
        let hex = hex.trim();
        if !hex.len().is_multiple_of(2) {
            return Err(Error::param("key", "hex key must have an even number of digits"));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::param("key", format!("invalid hex: {e}")))?;
        Self::new(bytes, context_window)
    }

    pub fn key_bytes(&self) -> &[u8] {
        &self.key_bytes
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    /// The lazily evaluated uniform vector for step `step` following
    /// `context` (only the last `context_window` tokens are hashed).
    pub fn uniforms(&self, context: &[TokenId], step: u64, vocab: usize) -> KeyedUniforms {
        let tail = &context[context.len().saturating_sub(self.context_window)..];
        let mut h = SipHasher13::new_with_keys(self.sip.0, self.sip.1);
        h.write(&(tail.len() as u32).to_le_bytes());
        for t in tail {
            h.write(&t.0.to_le_bytes());
        }
        h.write(&step.to_le_bytes());
        KeyedUniforms { prefix: h, vocab }
    }
}

/// Maps the top 53 bits of a hash to the open interval `(0, 1)`.
fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draws a uniform on the open interval `(0, 1)`.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    bits_to_open_unit(rng.next_u64())
}

/// A vector `ζ = (U_1, …, U_K)` whose coordinates can be read individually.
pub trait UniformSource {
    fn vocab(&self) -> usize;
    fn uniform(&self, w: usize) -> f64;
}

impl UniformSource for [f64] {
    fn vocab(&self) -> usize {
        self.len()
    }

    fn uniform(&self, w: usize) -> f64 {
        self[w]
    }
}

impl UniformSource for Vec<f64> {
    fn vocab(&self) -> usize {
        self.len()
    }

    fn uniform(&self, w: usize) -> f64 {
        self[w]
    }
}

/// Key-derived uniforms for one step; each coordinate costs one hash.
#[derive(Debug, Clone)]
pub struct KeyedUniforms {
    prefix: SipHasher13,
    vocab: usize,
}

impl UniformSource for KeyedUniforms {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn uniform(&self, w: usize) -> f64 {
        let mut h = self.prefix;
        h.write(&(w as u32).to_le_bytes());
        bits_to_open_unit(h.finish128().h1)
    }
}

/// `U_w` for `(key, context, step, w)`.
pub fn derive_uniform(key: &WatermarkKey, context: &[TokenId], step: u64, w: TokenId) -> f64 {
    key.uniforms(context, step, w.index() + 1).uniform(w.index())
}

/// The Gumbel-max decoder. Zero-probability tokens are never selected; ties
/// go to the lowest index.
pub fn decode<Z: UniformSource + ?Sized>(p: &ProbVector, zeta: &Z) -> TokenId {
    let mut best = usize::MAX;
    let mut best_score = f64::NEG_INFINITY;
    for (w, &pw) in p.probs().iter().enumerate() {
        if pw <= 0.0 {
            continue;
        }
        let score = zeta.uniform(w).ln() / pw;
        if best == usize::MAX || score > best_score {
            best = w;
            best_score = score;
        }
    }
    TokenId::from(best)
}

/// The pivotal statistic `Y = U_W`.
pub fn pivotal<Z: UniformSource + ?Sized>(zeta: &Z, w: TokenId) -> PivotalValue {
    PivotalValue::new(zeta.uniform(w.index())).expect("uniforms lie in (0,1)")
}

/// `F^P(y) = Σ P_w y^{1/P_w}` with `y^∞ = 0` for `y < 1`.
pub fn alt_cdf(p: &ProbVector, y: f64) -> f64 {
    if y >= 1.0 {
        return 1.0;
    }
    if y <= 0.0 {
        return 0.0;
    }
    p.probs()
        .iter()
        .filter(|&&pw| pw > 0.0)
        .map(|&pw| pw * y.powf(1.0 / pw))
        .sum::<f64>()
        .min(1.0)
}

/// Density of `F^P`: `Σ_{P_w > 0} y^{1/P_w - 1}`.
pub fn alt_density(p: &ProbVector, y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    p.probs()
        .iter()
        .filter(|&&pw| pw > 0.0)
        .map(|&pw| y.powf(1.0 / pw - 1.0))
        .sum()
}

/// Draws `Y` under the watermarked alternative by running the decoder on a
/// fresh uniform vector.
pub fn sample_alt<R: RngCore + ?Sized>(p: &ProbVector, rng: &mut R) -> PivotalValue {
    let zeta: Vec<f64> = (0..p.len()).map(|_| open_unit(rng)).collect();
    let w = decode(p, &zeta);
    pivotal(&zeta, w)
}

/// `KL(F^P ‖ U)` in nats by adaptive quadrature (absolute tolerance 1e-8).
pub fn kl_alt_uniform(p: &ProbVector) -> f64 {
    if p.is_degenerate() {
        return 0.0;
    }
    quadrature::integrate(
        |y| {
            let d = alt_density(p, y);
            if d > 0.0 {
                d * d.ln()
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        1e-8,
    )
    .value
}

/// `P* = (1 - δ, δ, 0, …, 0)`, the vector whose `F^P` dominates every other
/// member of the set with largest entry at most `1 - δ`.
pub fn extremal_vector(k: usize, delta: f64) -> Result<ProbVector> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::param("delta", format!("must lie in (0, 1/2], got {delta}")));
    }
    let mut v = vec![0.0; k.max(2)];
    v[0] = 1.0 - delta;
    v[1] = delta;
    ProbVector::new(v)
}

/// Pearson chi-square summary of decoder frequencies against `P`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Decoded token counts, indexed by token.
    pub counts: Vec<u64>,
}

/// Decodes `n` fresh uniform vectors and tests the token frequencies against
/// `P`. Categories with expected count below 5 are pooled into one bin, which
/// is kept only if its own expected count reaches 5.
pub fn unbiasedness_check<R: RngCore + ?Sized>(
    p: &ProbVector,
    n: usize,
    rng: &mut R,
) -> Result<ChiSquare> {
    if n < 1000 {
        return Err(Error::param("n", format!("need at least 1000 draws, got {n}")));
    }
    let k = p.len();
    let mut counts = vec![0u64; k];
    let mut zeta = vec![0.0; k];
    for _ in 0..n {
        for z in zeta.iter_mut() {
            *z = open_unit(rng);
        }
        counts[decode(p, &zeta).index()] += 1;
    }
    let nf = n as f64;
    let mut statistic = 0.0;
    let mut bins = 0usize;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&c, &pw) in counts.iter().zip(p.probs()) {
        let expected = nf * pw;
        if expected >= 5.0 {
            statistic += (c as f64 - expected).powi(2) / expected;
            bins += 1;
        } else {
            pooled_obs += c as f64;
            pooled_exp += expected;
        }
    }
    if pooled_exp >= 5.0 {
        statistic += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        bins += 1;
    }
    let df = bins.saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        statrs::function::gamma::gamma_ur(df as f64 / 2.0, statistic / 2.0)
    };
    Ok(ChiSquare {
        statistic,
        df,
        p_value,
        counts,
    })
}
