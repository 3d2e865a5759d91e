//! `ewmark`: generate watermarked streams, run sequential detectors, and
//! reproduce the simulated error-rate experiments.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ewmark_core::baselines::{null_threshold, Score};
use ewmark_core::eprocess::find_lambda0;
use ewmark_core::sim::{self, DetectorSpec, ExperimentConfig, SpikeConfig, StreamGenerator};
use ewmark_core::stream::{self, GeneratorConfig, NtpSource, RecordReader, TraceWriter};
use ewmark_core::{
    ConstructionKind, DetectorConfig, Error, FixedKind, OgVariant, PivotalRecord, ProbVector,
    WatermarkKey,
};

#[derive(Parser)]
#[command(name = "ewmark", version, about = "Anytime-valid Gumbel-max watermark detection")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a JSONL stream of pivotal records.
    Generate(GenerateArgs),
    /// Run a sequential detector over a JSONL stream (file or stdin).
    Detect(DetectArgs),
    /// Monte-Carlo error curves for spike distributions.
    Simulate(SimulateArgs),
    /// Exact null thresholds of the sum baselines.
    Thresholds(ThresholdArgs),
    /// A mixture weight with positive drift against the least favourable alternative.
    Lambda0(Lambda0Args),
    /// Render a results directory as text tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL file with one next-token distribution per line.
    #[arg(long, conflicts_with = "spike")]
    ntp_file: Option<PathBuf>,
    /// Use simulated spike distributions.
    #[arg(long)]
    spike: bool,
    /// Vocabulary size of the spike distributions.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Upper bound of the spike gap (drawn from U(0.001, delta)).
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Number of tokens (defaults to the whole NTP file).
    #[arg(long = "tokens", short = 'T')]
    tokens: Option<usize>,
    /// Hex-encoded watermark key.
    #[arg(long)]
    key: Option<String>,
    /// Previous tokens hashed into each step's uniforms.
    #[arg(long)]
    context_window: Option<usize>,
    /// Choose tokens with the watermark decoder (false: sample them from P).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    watermarked: bool,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectorFlags {
    /// Detector config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// nonadaptive, weight-adaptive, og or average.
    #[arg(long)]
    detector: Option<ConstructionKind>,
    /// Base calibrator: linear, sqrtinv, neglog or vs.
    #[arg(long)]
    calibrator: Option<FixedKind>,
    /// Fixed mixture weight (nonadaptive).
    #[arg(long)]
    lambda: Option<f64>,
    /// Upper bound of the adaptive mixture weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Pseudo-observation rule of the OG fit: ea or ea2.
    #[arg(long)]
    og_variant: Option<OgVariant>,
    /// Clamp OG heights into [a, b], given as `a,b`.
    #[arg(long, value_parser = parse_range)]
    range: Option<(f64, f64)>,
    /// Level; rejects once log M reaches ln(1/alpha).
    #[arg(long)]
    alpha: Option<f64>,
    /// Stop without rejection once M falls below beta (0 disables).
    #[arg(long)]
    beta: Option<f64>,
    /// Maximum number of records to read.
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Args)]
struct DetectArgs {
    /// Input JSONL; stdin when absent or `-`.
    input: Option<PathBuf>,
    #[command(flatten)]
    detector: DetectorFlags,
    /// Per-step trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vocabulary size.
    #[arg(long)]
    k: Option<usize>,
    /// Upper bound of the spike gap.
    #[arg(long)]
    delta: Option<f64>,
    /// Stream length per replicate.
    #[arg(long = "tokens", short = 'T')]
    tokens: Option<usize>,
    /// Replicates per arm.
    #[arg(long)]
    replicates: Option<usize>,
    /// Level of every detector.
    #[arg(long)]
    alpha: Option<f64>,
    /// Restrict the e-process detectors to one construction (sum baselines are kept).
    #[arg(long)]
    detector: Option<ConstructionKind>,
    /// Results directory.
    #[arg(long, env = "EWMARK_RESULTS_DIR", default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Score: ars or log.
    #[arg(long, default_value = "ars")]
    score: String,
    /// Sequence length.
    #[arg(long = "tokens", short = 'T', default_value_t = 1)]
    tokens: u64,
    /// Level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Print every length 1..=T instead of only T.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct Lambda0Args {
    /// Upper bound of the spike gap.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Base calibrator of the mixture.
    #[arg(long, default_value = "neglog")]
    calibrator: FixedKind,
}

#[derive(Args)]
struct ReportArgs {
    /// Results directory holding a manifest.
    #[arg(long = "out", env = "EWMARK_RESULTS_DIR", default_value = "results")]
    dir: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
    Ok((a, b))
}

/// Exit 1 for operational IO failures, 2 for bad input of any kind.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn open_input(path: &Path, what: &str) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure { code: 1, msg: format!("cannot open {what} {}: {e}", path.display()) })
}

fn create_output(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure { code: 1, msg: format!("cannot write {}: {e}", path.display()) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate(a) => generate(a, cli.seed),
        Command::Detect(a) => detect(a),
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Thresholds(a) => thresholds(a),
        Command::Lambda0(a) => lambda0(a),
        Command::Report(a) => report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ewmark: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn generate(a: GenerateArgs, seed: u64) -> Result<(), Failure> {
    let file_cfg: Option<GeneratorConfig> = match &a.config {
        Some(p) => Some(serde_json::from_reader(open_input(p, "config")?)?),
        None => None,
    };
    let source = match (&a.ntp_file, a.spike) {
        (Some(path), _) => NtpSource::File { path: path.clone() },
        (None, true) => NtpSource::Spike { k: a.k, delta_max: a.delta },
        (None, false) => match &file_cfg {
            Some(c) => c.ntp_source.clone(),
            None => return Err(usage("need exactly one NTP source: --ntp-file or --spike")),
        },
    };
    let key_hex = a.key.clone().or_else(|| file_cfg.as_ref().and_then(|c| c.key_hex.clone()));
    let window = a
        .context_window
        .or(file_cfg.as_ref().map(|c| c.context_window))
        .unwrap_or(stream::DEFAULT_CONTEXT_WINDOW);
    let key = match key_hex {
        Some(hex) => WatermarkKey::from_hex(&hex, window)?,
        None if a.watermarked => return Err(usage("--key is required for watermarked generation")),
        // Unwatermarked text still needs some key to report Y = U_W.
        None => WatermarkKey::new(format!("ewmark-null-{seed}").into_bytes(), window)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<PivotalRecord> = match source {
        NtpSource::File { path } => {
            let mut ntps = stream::read_ntp_jsonl(open_input(&path, "NTP file")?)?;
            if let Some(t) = a.tokens {
                if t > ntps.len() {
                    return Err(usage(format!("--tokens {t} exceeds the {} distributions in the file", ntps.len())));
                }
                ntps.truncate(t);
            }
            sim::generate_records(&ntps, &key, a.watermarked, &mut rng)
        }
        NtpSource::Spike { k, delta_max } => {
            let cfg = SpikeConfig {
                k,
                delta_max,
                t: a.tokens.unwrap_or(SpikeConfig::default().t),
                seed,
            };
            cfg.validate()?;
            let mut gen = StreamGenerator::new(key, a.watermarked);
            (0..cfg.t)
                .map(|_| {
                    let p: ProbVector = sim::gen_spike_ntp(&cfg, &mut rng);
                    gen.next_record(&p, &mut rng)
                })
                .collect()
        }
    };
    match &a.out {
        Some(p) => stream::write_records(create_output(p)?, &records)?,
        // A downstream detector may stop reading once it has a verdict.
        None => match stream::write_records(io::stdout().lock(), &records) {
            Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => {}
            other => other?,
        },
    }
    Ok(())
}

fn detector_config(f: &DetectorFlags) -> Result<DetectorConfig, Failure> {
    let mut cfg = match &f.config {
        Some(p) => {
            let mut text = String::new();
            io::Read::read_to_string(&mut open_input(p, "config")?, &mut text)?;
            DetectorConfig::from_json(&text)?
        }
        None => DetectorConfig::default(),
    };
    if let Some(v) = f.detector {
        cfg.construction = v;
    }
    if let Some(v) = f.calibrator {
        cfg.g = v;
    }
    if let Some(v) = f.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = f.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = f.og_variant {
        cfg.variant = v;
    }
    if f.range.is_some() {
        cfg.range = f.range;
    }
    if let Some(v) = f.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = f.beta {
        cfg.beta = v;
    }
    if f.horizon.is_some() {
        cfg.horizon = f.horizon;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn detect(a: DetectArgs) -> Result<(), Failure> {
    let cfg = detector_config(&a.detector)?;
    let mut state = cfg.build()?;
    let mut trace = match &a.trace_out {
        Some(p) => Some(TraceWriter::new(create_output(p)?, "log_m")?),
        None => None,
    };
    let input: Box<dyn BufRead> = match &a.input {
        Some(p) if p.as_os_str() != "-" => Box::new(open_input(p, "input")?),
        _ => Box::new(io::stdin().lock()),
    };
    for rec in RecordReader::new(input) {
        let rec = rec?;
        let out = state.step(rec.pivotal()?)?;
        if let Some(w) = trace.as_mut() {
            w.write(&out)?;
        }
        if state.verdict().is_terminal() {
            break;
        }
    }
    let verdict = state.finish();
    if let Some(w) = trace.as_mut() {
        w.flush()?;
    }
    let mut stdout = io::stdout().lock();
    serde_json::to_writer(
        &mut stdout,
        &serde_json::json!({
            "verdict": verdict.status.as_str(),
            "stop_index": verdict.stop_index,
            "final_log_m": verdict.final_log_m,
        }),
    )?;
    writeln!(stdout)?;
    stdout.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs, seed: u64) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_reader(open_input(p, "config")?)?,
        None => ExperimentConfig::new(SpikeConfig::default(), Vec::new()),
    };
    cfg.spike.seed = seed;
    if let Some(v) = a.k {
        cfg.spike.k = v;
    }
    if let Some(v) = a.delta {
        cfg.spike.delta_max = v;
    }
    if let Some(v) = a.tokens {
        cfg.spike.t = v;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    cfg.spike.validate()?;
    if cfg.detectors.is_empty() {
        cfg.detectors = DetectorSpec::defaults(cfg.spike.delta_max)?;
    }
    if let Some(kind) = a.detector {
        let wanted = DetectorConfig {
            construction: kind,
            ..DetectorConfig::default()
        };
        let keep = |c: &ewmark_core::Construction| std::mem::discriminant(c) == std::mem::discriminant(&wanted.construction());
        cfg.detectors.retain(|d| match d {
            DetectorSpec::EProcess { construction } => keep(construction),
            DetectorSpec::Sum { .. } => true,
        });
    }
    let curves = sim::run_experiment(&cfg)?;
    sim::emit_results(&curves, &cfg, &a.out)?;
    print!("{}", sim::render_report(&curves));
    println!("\nresults written to {}", a.out.display());
    Ok(())
}

fn thresholds(a: ThresholdArgs) -> Result<(), Failure> {
    let score: Score = a.score.parse()?;
    if a.table {
        for t in 1..=a.tokens {
            println!("{t}\t{:.6}", null_threshold(score, t, a.alpha)?);
        }
    } else {
        println!("{:.6}", null_threshold(score, a.tokens, a.alpha)?);
    }
    Ok(())
}

fn lambda0(a: Lambda0Args) -> Result<(), Failure> {
    let l = find_lambda0(a.delta, a.calibrator)?;
    println!(
        "{}",
        serde_json::json!({
            "delta": a.delta,
            "g": a.calibrator.name(),
            "lambda": l.lambda,
            "drift": l.drift,
        })
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    if !a.dir.join(sim::MANIFEST_FILE).is_file() {
        return Err(usage(format!("no results manifest in {}", a.dir.display())));
    }
    let (manifest, curves) = sim::load_results(&a.dir)?;
    println!("ewmark {} | config {} | seed {}", manifest.version, manifest.config_hash, manifest.seed);
    print!("{}", sim::render_report(&curves));
    Ok(())
}
