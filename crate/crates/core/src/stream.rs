//! File formats: pivotal-record JSONL, NTP JSONL, generator configs and
//! per-step trace CSV.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eprocess::StepOutcome;
use crate::types::{PivotalValue, ProbVector, TokenId};

/// One generated (or observed) step: `{"step": 1, "token_id": 17, "y": 0.93}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PivotalRecord {
    pub step: u64,
    pub token_id: u32,
    pub y: f64,
}

impl PivotalRecord {
    pub fn token(&self) -> TokenId {
        TokenId(self.token_id)
    }

    pub fn pivotal(&self) -> Result<PivotalValue> {
        PivotalValue::new(self.y)
    }
}

/// Parses one JSONL line; `line` is 1-based and only used for error messages.
pub fn parse_record(text: &str, line: usize) -> Result<PivotalRecord> {
    let rec: PivotalRecord =
        serde_json::from_str(text).map_err(|e| Error::Record { line, msg: e.to_string() })?;
    if !(0.0..=1.0).contains(&rec.y) {
        return Err(Error::Record {
            line,
            msg: format!("y must lie in [0, 1], got {}", rec.y),
        });
    }
    Ok(rec)
}

/// Lazily parses records from a reader, one line at a time, skipping blank
/// lines. Suitable for pipes: nothing is read ahead of the current record.
pub struct RecordReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: String::new(),
        }
    }

    /// Number of lines consumed so far.
    pub fn line(&self) -> usize {
        self.line
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<PivotalRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line += 1;
                    let text = self.buf.trim();
                    if text.is_empty() {
                        continue;
                    }
                    return Some(parse_record(text, self.line));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<PivotalRecord>> {
    RecordReader::new(reader).collect()
}

pub fn write_records<W: Write>(mut w: W, records: &[PivotalRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one probability vector per line (`[0.2, 0.3, 0.5]`), renormalizing each.
pub fn read_ntp_jsonl<R: BufRead>(reader: R) -> Result<Vec<ProbVector>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let raw: Vec<f64> =
            serde_json::from_str(text).map_err(|e| Error::Record { line: i + 1, msg: e.to_string() })?;
        out.push(ProbVector::new(raw).map_err(|e| Error::Record {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Where the generator takes its next-token distributions from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NtpSource {
    /// A JSONL file with one probability vector per step.
    File { path: PathBuf },
    /// Simulated spike distributions.
    Spike { k: usize, delta_max: f64 },
}

/// `{"key_hex": "00ff…", "context_window": 1, "ntp_source": {"kind": "spike", "k": 1000, "delta_max": 0.2}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default)]
    pub key_hex: Option<String>,
    #[serde(default = "default_context_window")]
    pub context_window: usize,
    pub ntp_source: NtpSource,
}

pub const DEFAULT_CONTEXT_WINDOW: usize = 1;

fn default_context_window() -> usize {
    DEFAULT_CONTEXT_WINDOW
}

/// Writes `t,y,e_value,<value column>,verdict` rows. The value column is
/// `log_m` for e-processes and `score` for sum baselines.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W, value_column: &str) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(["t", "y", "e_value", value_column, "verdict"])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, step: &StepOutcome) -> Result<()> {
        self.inner.write_record([
            step.t.to_string(),
            step.y.to_string(),
            step.e_value.to_string(),
            step.log_m.to_string(),
            step.verdict.as_str().to_string(),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// A parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub y: f64,
    pub e_value: f64,
    pub value: f64,
    pub verdict: String,
}

pub fn read_trace<R: std::io::Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Record { line: i + 2, msg };
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| bad(format!("missing column {j}")))?
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))
        };
        out.push(TraceRow {
            t: rec
                .get(0)
                .unwrap_or_default()
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            y: num(1)?,
            e_value: num(2)?,
            value: num(3)?,
            verdict: rec.get(4).unwrap_or_default().to_string(),
        });
    }
    Ok(out)
}
