//! Monte-Carlo harness: spike next-token distributions, watermarked and
//! unwatermarked streams, error-curve estimation and result files.

use std::collections::HashMap;
use std::fs;
use std::hash::Hasher;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use siphasher::sip128::{Hasher128, SipHasher13};

use crate::baselines::{Score, ThresholdTable};
use crate::calibrators::{FixedKind, OgVariant};
use crate::eprocess::{find_lambda0, log_threshold, Construction, EProcessState};
use crate::error::{Error, Result};
use crate::stats::binomial_se;
use crate::stream::{PivotalRecord, DEFAULT_CONTEXT_WINDOW};
use crate::types::{PivotalValue, ProbVector, TokenId};
use crate::watermark::{decode, UniformSource, WatermarkKey};

/// Lower end of the spike mass range `Δ_t ~ U(0.001, δ)`.
pub const DELTA_MIN: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeConfig {
    pub k: usize,
    pub delta_max: f64,
    pub t: usize,
    pub seed: u64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            delta_max: 0.2,
            t: 700,
            seed: 0,
        }
    }
}

impl SpikeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::param("k", format!("vocabulary needs at least 2 tokens, got {}", self.k)));
        }
        if !(self.delta_max > DELTA_MIN && self.delta_max < 1.0) {
            return Err(Error::param(
                "delta",
                format!("must lie in ({DELTA_MIN}, 1), got {}", self.delta_max),
            ));
        }
        if self.t == 0 {
            return Err(Error::param("T", "must be at least 1"));
        }
        Ok(())
    }
}

/// One spike distribution: mass `1 - Δ` on a uniformly chosen token, the rest
/// spread by normalized uniforms.
pub fn gen_spike_ntp<R: Rng + ?Sized>(cfg: &SpikeConfig, rng: &mut R) -> ProbVector {
    let delta = rng.random_range(DELTA_MIN..cfg.delta_max);
    let spike = rng.random_range(0..cfg.k);
    let mut probs: Vec<f64> = (0..cfg.k).map(|_| rng.random::<f64>()).collect();
    probs[spike] = 0.0;
    let rest: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p *= delta / rest;
    }
    probs[spike] = 1.0 - delta;
    ProbVector::new(probs).expect("spike vector is valid")
}

fn sample_categorical<R: Rng + ?Sized>(p: &ProbVector, rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (w, &pw) in p.probs().iter().enumerate() {
        if pw <= 0.0 {
            continue;
        }
        acc += pw;
        last = w;
        if u < acc {
            break;
        }
    }
    TokenId::from(last)
}

/// Produces records one step at a time, tracking the hashed context.
///
/// Watermarked steps pick `W = decode(P, ζ)`; unwatermarked steps draw `W`
/// from `P` with the external rng, independently of `ζ`. Either way the
/// record carries `Y = U_W` from the key.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    key: WatermarkKey,
    watermarked: bool,
    context: Vec<TokenId>,
    step: u64,
}

impl StreamGenerator {
    pub fn new(key: WatermarkKey, watermarked: bool) -> Self {
        Self {
            key,
            watermarked,
            context: Vec::new(),
            step: 0,
        }
    }

    pub fn next_record<R: Rng + ?Sized>(&mut self, p: &ProbVector, rng: &mut R) -> PivotalRecord {
        self.step += 1;
        let zeta = self.key.uniforms(&self.context, self.step, p.len());
        let w = if self.watermarked {
            decode(p, &zeta)
        } else {
            sample_categorical(p, rng)
        };
        let y = zeta.uniform(w.index());
        let window = self.key.context_window();
        if window > 0 {
            if self.context.len() == window {
                self.context.remove(0);
            }
            self.context.push(w);
        }
        PivotalRecord {
            step: self.step,
            token_id: w.0,
            y,
        }
    }
}

pub fn generate_records<'a, I, R>(ntps: I, key: &WatermarkKey, watermarked: bool, rng: &mut R) -> Vec<PivotalRecord>
where
    I: IntoIterator<Item = &'a ProbVector>,
    R: Rng + ?Sized,
{
    let mut gen = StreamGenerator::new(key.clone(), watermarked);
    ntps.into_iter().map(|p| gen.next_record(p, rng)).collect()
}

/// `cfg.t` records over fresh spike distributions, seeded by `cfg.seed`.
pub fn gen_streams(cfg: &SpikeConfig, watermarked: bool, key: &WatermarkKey) -> Result<Vec<PivotalRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen = StreamGenerator::new(key.clone(), watermarked);
    Ok((0..cfg.t)
        .map(|_| {
            let p = gen_spike_ntp(cfg, &mut rng);
            gen.next_record(&p, &mut rng)
        })
        .collect())
}

/// A detector evaluated by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorSpec {
    EProcess { construction: Construction },
    Sum { score: Score },
}

impl DetectorSpec {
    pub fn label(&self) -> String {
        match self {
            DetectorSpec::EProcess { construction } => construction.label(),
            DetectorSpec::Sum { score } => format!("sum-{}", score.name()),
        }
    }

    /// The four e-process constructions and both sum baselines. The
    /// nonadaptive weight is the safe `λ_0` for `-log p` at `delta`.
    pub fn defaults(delta: f64) -> Result<Vec<Self>> {
        let lambda = find_lambda0(delta.min(0.5), FixedKind::NegLog)?.lambda;
        let e = |construction| DetectorSpec::EProcess { construction };
        Ok(vec![
            e(Construction::Nonadaptive {
                g: FixedKind::NegLog,
                lambda,
            }),
            e(Construction::WeightAdaptive {
                g: FixedKind::NegLog,
                gamma: 0.5,
            }),
            e(Construction::Og {
                variant: OgVariant::Ea2,
                range: None,
            }),
            e(Construction::recommended_average()),
            DetectorSpec::Sum { score: Score::Ars },
            DetectorSpec::Sum { score: Score::Log },
        ])
    }
}

fn default_replicates() -> usize {
    200
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub spike: SpikeConfig,
    /// Replaces the spike generator with one fixed distribution at every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_ntp: Option<ProbVector>,
    pub detectors: Vec<DetectorSpec>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_hex: Option<String>,
    /// Simulate unwatermarked streams (Type I curves).
    #[serde(default = "default_true")]
    pub null_arm: bool,
    /// Simulate watermarked streams (Type II curves).
    #[serde(default = "default_true")]
    pub alternative_arm: bool,
}

impl ExperimentConfig {
    pub fn new(spike: SpikeConfig, detectors: Vec<DetectorSpec>) -> Self {
        Self {
            spike,
            fixed_ntp: None,
            detectors,
            replicates: default_replicates(),
            alpha: default_alpha(),
            key_hex: None,
            null_arm: true,
            alternative_arm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spike.validate()?;
        if self.replicates == 0 {
            return Err(Error::param("replicates", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        for d in &self.detectors {
            if let DetectorSpec::EProcess { construction } = d {
                construction.validate()?;
            }
        }
        self.base_key()?;
        Ok(())
    }

    fn base_key(&self) -> Result<Vec<u8>> {
        match &self.key_hex {
            Some(hex) => Ok(WatermarkKey::from_hex(hex, 0)?.key_bytes().to_vec()),
            None => Ok(b"ewmark-sim".to_vec()),
        }
    }

    /// Stable digest of the JSON form, for manifests.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = SipHasher13::new();
        h.write(json.as_bytes());
        format!("{:032x}", h.finish128().as_u128())
    }

    fn key_for(&self, base: &[u8], replicate: u64) -> WatermarkKey {
        let mut bytes = base.to_vec();
        bytes.extend_from_slice(&self.spike.seed.to_le_bytes());
        bytes.extend_from_slice(&replicate.to_le_bytes());
        WatermarkKey::new(bytes, DEFAULT_CONTEXT_WINDOW).expect("nonempty key")
    }

    /// Pivotal values of one replicate's stream. Each (replicate, arm) pair
    /// has its own ChaCha stream, so results do not depend on scheduling.
    pub fn replicate_ys(&self, replicate: u64, watermarked: bool) -> Result<Vec<f64>> {
        let key = self.key_for(&self.base_key()?, replicate);
        let mut rng = ChaCha8Rng::seed_from_u64(self.spike.seed);
        rng.set_stream(2 * replicate + u64::from(watermarked));
        let mut gen = StreamGenerator::new(key, watermarked);
        Ok((0..self.spike.t)
            .map(|_| match &self.fixed_ntp {
                Some(p) => gen.next_record(p, &mut rng).y,
                None => {
                    let p = gen_spike_ntp(&self.spike, &mut rng);
                    gen.next_record(&p, &mut rng).y
                }
            })
            .collect())
    }
}

/// A rate curve over `t = 1..=T` with binomial standard errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub value: Vec<f64>,
    pub se: Vec<f64>,
}

impl Curve {
    fn from_counts(counts: &[u64], n: usize) -> Self {
        let value: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let se = value.iter().map(|&r| binomial_se(r, n)).collect();
        Self { value, se }
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Value at `t` (1-based).
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.value.get(i)).copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.value.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCurves {
    pub detector: String,
    /// Fixed-length rejection at `t` under the null.
    pub type1: Curve,
    /// Rejection at any `s ≤ t` under the null.
    pub seq_type1: Curve,
    /// Non-rejection by `t` under the alternative: no crossing so far for
    /// e-processes, the fixed-length test at `t` for sums.
    pub type2: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurves {
    pub alpha: f64,
    pub horizon: usize,
    pub null_replicates: usize,
    pub alt_replicates: usize,
    pub detectors: Vec<DetectorCurves>,
}

#[derive(Debug, Clone)]
struct Tally {
    type1: Vec<u64>,
    seq: Vec<u64>,
    type2: Vec<u64>,
}

impl Tally {
    fn zero(horizon: usize) -> Self {
        Self {
            type1: vec![0; horizon],
            seq: vec![0; horizon],
            type2: vec![0; horizon],
        }
    }

    fn add(&mut self, other: &Tally) {
        for (a, b) in [
            (&mut self.type1, &other.type1),
            (&mut self.seq, &other.seq),
            (&mut self.type2, &other.type2),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Tallies indexed `[detector][level]`.
type Tallies = Vec<Vec<Tally>>;

fn add_tallies(mut a: Tallies, b: &Tallies) -> Tallies {
    for (da, db) in a.iter_mut().zip(b) {
        for (ta, tb) in da.iter_mut().zip(db) {
            ta.add(tb);
        }
    }
    a
}

fn tally_eprocess(
    c: &Construction,
    null: Option<&[f64]>,
    alt: Option<&[f64]>,
    thresholds: &[f64],
    out: &mut [Tally],
) -> Result<()> {
    let top = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(ys) = null {
        let mut state = EProcessState::monitor(c.clone(), 0.5)?;
        for (i, &y) in ys.iter().enumerate() {
            let log_m = state.step(PivotalValue::new(y)?)?.log_m;
            let sup = state.sup_log_m();
            for (tally, &thr) in out.iter_mut().zip(thresholds) {
                tally.type1[i] += u64::from(log_m >= thr);
                tally.seq[i] += u64::from(sup >= thr);
            }
        }
    }
    if let Some(ys) = alt {
        let mut state = EProcessState::monitor(c.clone(), 0.5)?;
        for (i, &y) in ys.iter().enumerate() {
            state.step(PivotalValue::new(y)?)?;
            let sup = state.sup_log_m();
            for (tally, &thr) in out.iter_mut().zip(thresholds) {
                tally.type2[i] += u64::from(sup < thr);
            }
            // Past the highest boundary every later count is zero.
            if sup >= top {
                break;
            }
        }
    }
    Ok(())
}

fn tally_sum(
    score: Score,
    null: Option<&[f64]>,
    alt: Option<&[f64]>,
    tables: &[ThresholdTable],
    out: &mut [Tally],
) {
    if let Some(ys) = null {
        for (tally, table) in out.iter_mut().zip(tables) {
            let mut crossed = false;
            for (i, (_, reject)) in table.scan(ys).into_iter().enumerate() {
                crossed |= reject;
                tally.type1[i] += u64::from(reject);
                tally.seq[i] += u64::from(crossed);
            }
        }
    }
    if let Some(ys) = alt {
        for (tally, table) in out.iter_mut().zip(tables) {
            for (i, (_, reject)) in table.scan(ys).into_iter().enumerate() {
                tally.type2[i] += u64::from(!reject);
            }
        }
    }
    debug_assert!(tables.iter().all(|t| t.score() == score));
}

/// Error curves at level `cfg.alpha`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ErrorCurves> {
    let mut v = run_experiment_levels(cfg, &[cfg.alpha])?;
    Ok(v.remove(0))
}

/// Error curves at several levels from one set of simulated streams.
pub fn run_experiment_levels(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<ErrorCurves>> {
    cfg.validate()?;
    for &a in alphas {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 1), got {a}")));
        }
    }
    let horizon = cfg.spike.t;
    let thresholds: Vec<f64> = alphas.iter().map(|&a| log_threshold(a)).collect();
    let mut tables: HashMap<Score, Vec<ThresholdTable>> = HashMap::new();
    for d in &cfg.detectors {
        if let DetectorSpec::Sum { score } = d {
            if !tables.contains_key(score) {
                let t = alphas
                    .iter()
                    .map(|&a| ThresholdTable::new(*score, a, horizon as u64))
                    .collect::<Result<Vec<_>>>()?;
                tables.insert(*score, t);
            }
        }
    }
    let zero: Tallies = vec![vec![Tally::zero(horizon); alphas.len()]; cfg.detectors.len()];

    let totals = (0..cfg.replicates as u64)
        .into_par_iter()
        .try_fold(
            || zero.clone(),
            |mut acc, r| -> Result<Tallies> {
                let null = if cfg.null_arm { Some(cfg.replicate_ys(r, false)?) } else { None };
                let alt = if cfg.alternative_arm { Some(cfg.replicate_ys(r, true)?) } else { None };
                for (d, out) in cfg.detectors.iter().zip(acc.iter_mut()) {
                    match d {
                        DetectorSpec::EProcess { construction } => {
                            tally_eprocess(construction, null.as_deref(), alt.as_deref(), &thresholds, out)?
                        }
                        DetectorSpec::Sum { score } => {
                            tally_sum(*score, null.as_deref(), alt.as_deref(), &tables[score], out)
                        }
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(|| zero.clone(), |a, b| Ok(add_tallies(a, &b)))?;

    let n = cfg.replicates;
    let curve = |enabled: bool, counts: &[u64]| {
        if enabled {
            Curve::from_counts(counts, n)
        } else {
            Curve::default()
        }
    };
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| ErrorCurves {
            alpha,
            horizon,
            null_replicates: if cfg.null_arm { n } else { 0 },
            alt_replicates: if cfg.alternative_arm { n } else { 0 },
            detectors: cfg
                .detectors
                .iter()
                .zip(&totals)
                .map(|(d, per_level)| {
                    let t = &per_level[j];
                    DetectorCurves {
                        detector: d.label(),
                        type1: curve(cfg.null_arm, &t.type1),
                        seq_type1: curve(cfg.null_arm, &t.seq),
                        type2: curve(cfg.alternative_arm, &t.type2),
                    }
                })
                .collect(),
        })
        .collect())
}

pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const METRICS: [&str; 3] = ["type1", "seq_type1", "type2"];

fn metric<'a>(d: &'a DetectorCurves, name: &str) -> &'a Curve {
    match name {
        "type1" => &d.type1,
        "seq_type1" => &d.seq_type1,
        _ => &d.type2,
    }
}

fn metric_mut<'a>(d: &'a mut DetectorCurves, name: &str) -> Option<&'a mut Curve> {
    match name {
        "type1" => Some(&mut d.type1),
        "seq_type1" => Some(&mut d.seq_type1),
        "type2" => Some(&mut d.type2),
        _ => None,
    }
}

/// Long-format CSV: `detector,t,metric,value,se`.
pub fn write_curves_csv<W: Write>(w: W, detectors: &[DetectorCurves]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["detector", "t", "metric", "value", "se"])?;
    for d in detectors {
        for name in METRICS {
            let c = metric(d, name);
            for (i, (v, se)) in c.value.iter().zip(&c.se).enumerate() {
                out.write_record([
                    d.detector.clone(),
                    (i + 1).to_string(),
                    name.to_string(),
                    v.to_string(),
                    se.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_curves_csv<R: std::io::Read>(r: R) -> Result<Vec<DetectorCurves>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out: Vec<DetectorCurves> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Record { line, msg };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", rec.len())));
        }
        let name = &rec[0];
        let t: usize = rec[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let value: f64 = rec[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let se: f64 = rec[4].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        if out.last().map(|d| d.detector.as_str()) != Some(name) {
            out.push(DetectorCurves {
                detector: name.to_string(),
                type1: Curve::default(),
                seq_type1: Curve::default(),
                type2: Curve::default(),
            });
        }
        let d = out.last_mut().expect("just pushed");
        let c = metric_mut(d, &rec[2]).ok_or_else(|| bad(format!("unknown metric `{}`", &rec[2])))?;
        if t != c.value.len() + 1 {
            return Err(bad(format!("expected t = {}, got {t}", c.value.len() + 1)));
        }
        c.value.push(value);
        c.se.push(se);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Summary {
    alpha: f64,
    horizon: usize,
    null_replicates: usize,
    alt_replicates: usize,
    detectors: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    detector: String,
    type1: Option<f64>,
    seq_type1: Option<f64>,
    type2: Option<f64>,
    log10_type2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes the curves CSV, a JSON summary, one gnuplot-ready `.dat` per detector
/// and a manifest into `dir`.
pub fn emit_results(curves: &ErrorCurves, cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = vec![CURVES_FILE.to_string(), SUMMARY_FILE.to_string()];
    write_curves_csv(fs::File::create(dir.join(CURVES_FILE))?, &curves.detectors)?;

    let summary = Summary {
        alpha: curves.alpha,
        horizon: curves.horizon,
        null_replicates: curves.null_replicates,
        alt_replicates: curves.alt_replicates,
        detectors: curves
            .detectors
            .iter()
            .map(|d| SummaryRow {
                detector: d.detector.clone(),
                type1: d.type1.last(),
                seq_type1: d.seq_type1.last(),
                type2: d.type2.last(),
                log10_type2: d.type2.last().map(f64::log10).filter(|v| v.is_finite()),
            })
            .collect(),
    };
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;

    for d in &curves.detectors {
        let name = format!("{}.dat", file_stem(&d.detector));
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&name))?);
        writeln!(w, "# {}  alpha={}", d.detector, curves.alpha)?;
        writeln!(w, "# t type1 seq_type1 type2 log10_type2")?;
        let cell = |c: &Curve, i: usize| c.value.get(i).map_or("NaN".to_string(), |v| v.to_string());
        for i in 0..curves.horizon {
            let log10 = d
                .type2
                .value
                .get(i)
                .map(|v| v.log10())
                .filter(|v| v.is_finite())
                .map_or("NaN".to_string(), |v| v.to_string());
            writeln!(
                w,
                "{} {} {} {} {}",
                i + 1,
                cell(&d.type1, i),
                cell(&d.seq_type1, i),
                cell(&d.type2, i),
                log10
            )?;
        }
        w.flush()?;
        files.push(name);
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.spike.seed,
        config_hash: cfg.hash_hex(),
        config: cfg.clone(),
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads back what [`emit_results`] wrote. The manifest must exist.
pub fn load_results(dir: &Path) -> Result<(Manifest, ErrorCurves)> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(fs::File::open(dir.join(MANIFEST_FILE))?))?;
    let summary: Summary = serde_json::from_reader(BufReader::new(fs::File::open(dir.join(SUMMARY_FILE))?))?;
    let mut detectors = read_curves_csv(BufReader::new(fs::File::open(dir.join(CURVES_FILE))?))?;
    // Detectors whose curves were all empty only appear in the summary.
    for (i, row) in summary.detectors.iter().enumerate() {
        if detectors.get(i).map(|d| d.detector.as_str()) != Some(row.detector.as_str()) {
            detectors.insert(
                i,
                DetectorCurves {
                    detector: row.detector.clone(),
                    type1: Curve::default(),
                    seq_type1: Curve::default(),
                    type2: Curve::default(),
                },
            );
        }
    }
    Ok((
        manifest,
        ErrorCurves {
            alpha: summary.alpha,
            horizon: summary.horizon,
            null_replicates: summary.null_replicates,
            alt_replicates: summary.alt_replicates,
            detectors,
        },
    ))
}

/// Checkpoints for text tables: 1, 10, 50, 100, then every 100 and the horizon.
pub fn report_checkpoints(horizon: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = [1, 10, 50].into_iter().filter(|&t| t <= horizon).collect();
    ts.extend((100..=horizon).step_by(100));
    if ts.last() != Some(&horizon) {
        ts.push(horizon);
    }
    ts
}

/// Renders curves as aligned text tables, one per metric.
pub fn render_report(curves: &ErrorCurves) -> String {
    let ts = report_checkpoints(curves.horizon);
    let width = curves.detectors.iter().map(|d| d.detector.len()).max().unwrap_or(8).max(8);
    let mut s = format!(
        "alpha = {}, T = {}, null replicates = {}, alternative replicates = {}\n",
        curves.alpha, curves.horizon, curves.null_replicates, curves.alt_replicates
    );
    for name in METRICS {
        s.push_str(&format!("\n{name}\n{:<width$}", "detector"));
        for t in &ts {
            s.push_str(&format!(" {:>8}", format!("t={t}")));
        }
        s.push('\n');
        for d in &curves.detectors {
            let c = metric(d, name);
            s.push_str(&format!("{:<width$}", d.detector));
            for &t in &ts {
                match c.at(t) {
                    Some(v) => s.push_str(&format!(" {v:>8.4}")),
                    None => s.push_str(&format!(" {:>8}", "-")),
                }
            }
            s.push('\n');
        }
    }
    s
}
