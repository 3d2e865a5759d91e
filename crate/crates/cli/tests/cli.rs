use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use ewmark_core::eprocess::run;
use ewmark_core::stream::{read_records, read_trace};
use ewmark_core::{DetectorConfig, PivotalValue};

fn ewmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ewmark"))
        .args(args)
        .env_remove("EWMARK_RESULTS_DIR")
        .output()
        .unwrap()
}

fn ewmark_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ewmark"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn verdict(o: &Output) -> serde_json::Value {
    serde_json::from_str(stdout(o).trim()).unwrap()
}

#[test]
fn generate_spike_stream() {
    let args = ["generate", "--spike", "--delta", "0.2", "-T", "10", "--key", "00ff", "--seed", "3"];
    let a = ewmark(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a).lines().count(), 10);
    let b = ewmark(&args);
    assert_eq!(a.stdout, b.stdout);
    let c = ewmark(&["generate", "--spike", "--delta", "0.2", "-T", "10", "--key", "00ff", "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
    let recs = read_records(&a.stdout[..]).unwrap();
    assert_eq!(recs.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
}

#[test]
fn generate_validates_flags() {
    let o = ewmark(&["generate", "--spike", "-T", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--key"));
    let o = ewmark(&["generate", "-T", "10", "--key", "00"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ewmark(&["generate", "--spike", "--key", "zz"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ewmark(&["generate", "--spike", "-T", "5", "--watermarked", "false"]);
    assert!(o.status.success());
    let o = ewmark(&["generate", "--spike", "--key", "00", "--out", "/nonexistent-dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_from_ntp_file() {
    let dir = tempfile::tempdir().unwrap();
    let ntp = dir.path().join("ntp.jsonl");
    std::fs::write(&ntp, "[0.5,0.5]\n[1,0]\n[0.2,0.3,0.5]\n").unwrap();
    let o = ewmark(&["generate", "--ntp-file", ntp.to_str().unwrap(), "--key", "abcd"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = read_records(&o.stdout[..]).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[1].token_id, 0);
}

#[test]
fn detect_verdicts() {
    let o = ewmark_stdin(&["detect"], b"");
    assert!(o.status.success());
    assert_eq!(verdict(&o)["verdict"], "no rejection");

    let strong: String = (1..=100).map(|t| format!("{{\"step\":{t},\"token_id\":0,\"y\":0.999}}\n")).collect();
    let o = ewmark_stdin(&["detect", "--alpha", "0.05"], strong.as_bytes());
    assert!(o.status.success());
    let v = verdict(&o);
    assert_eq!(v["verdict"], "rejected");
    assert!(v["stop_index"].as_u64().unwrap() < 100);
    assert!(v["final_log_m"].as_f64().unwrap() >= 20f64.ln());
}

#[test]
fn detect_rejects_bad_input() {
    let o = ewmark_stdin(&["detect"], b"{\"step\":1,\"token_id\":0,\"y\":0.5}\n{\"step\":2,\"token_id\":0,\"y\":-0.1}\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    let o = ewmark_stdin(&["detect", "--alpha", "2"], b"");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"));
    let o = ewmark_stdin(&["detect", "--detector", "bogus"], b"");
    assert_eq!(o.status.code(), Some(2));
    let o = ewmark_stdin(&["detect", "--detector", "og", "--range", "2,3"], b"");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("range"));
}

#[test]
fn detect_trace_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.jsonl");
    let gen = ewmark(&["generate", "--spike", "--k", "200", "--delta", "0.5", "-T", "300", "--key", "beef", "--seed", "9", "--out", stream.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    let recs = read_records(std::io::BufReader::new(std::fs::File::open(&stream).unwrap())).unwrap();

    for (flags, cfg) in [
        (vec!["--detector", "average"], DetectorConfig::default()),
        (
            vec!["--detector", "og", "--og-variant", "ea"],
            DetectorConfig::from_json(r#"{"construction":"og","variant":"ea"}"#).unwrap(),
        ),
        (
            vec!["--detector", "nonadaptive", "--calibrator", "vs", "--lambda", "0.3", "--alpha", "0.001"],
            DetectorConfig::from_json(r#"{"construction":"nonadaptive","g":"vs","lambda":0.3,"alpha":0.001}"#).unwrap(),
        ),
    ] {
        let trace = dir.path().join("trace.csv");
        let mut args = vec!["detect", stream.to_str().unwrap(), "--trace-out", trace.to_str().unwrap()];
        args.extend(flags);
        let o = ewmark(&args);
        assert!(o.status.success(), "{}", stderr(&o));

        let ys = recs.iter().map(|r| PivotalValue::new(r.y).unwrap());
        let lib = run(ys, cfg.construction(), cfg.alpha, cfg.beta, cfg.horizon).unwrap();
        let rows = read_trace(std::fs::File::open(&trace).unwrap()).unwrap();
        assert_eq!(rows.len(), lib.steps.len());
        for (row, step) in rows.iter().zip(&lib.steps) {
            assert_eq!(row.value.to_bits(), step.log_m.to_bits());
            assert_eq!(row.e_value.to_bits(), step.e_value.to_bits());
            assert_eq!(row.verdict, step.verdict.as_str());
        }
        let v = verdict(&o);
        assert_eq!(v["verdict"], lib.verdict.status.as_str());
        assert_eq!(v["final_log_m"].as_f64().unwrap().to_bits(), lib.verdict.final_log_m.to_bits());
    }
}

/// The verdict is issued while the writer still holds the pipe open.
#[test]
fn detect_exits_before_eof() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ewmark"))
        .args(["detect"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let start = Instant::now();
    let mut sent = 0;
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(30), "detector never exited");
        if sent < 200 {
            sent += 1;
            // Ignore EPIPE: the detector may already be gone.
            let _ = writeln!(stdin, "{{\"step\":{sent},\"token_id\":0,\"y\":0.999}}");
            let _ = stdin.flush();
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    assert!(status.success());
    assert!(sent < 200, "needed {sent} records");
    let mut out = String::new();
    std::io::Read::read_to_string(&mut child.stdout.take().unwrap(), &mut out).unwrap();
    assert!(out.contains("\"rejected\""));
    drop(stdin);
}

#[test]
fn thresholds_and_lambda0() {
    let o = ewmark(&["thresholds", "--score", "ars", "-T", "1", "--alpha", "0.05"]);
    assert_eq!(stdout(&o).trim(), "2.995732");
    let o = ewmark(&["thresholds", "--score", "log", "-T", "3", "--table"]);
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = ewmark(&["thresholds", "--score", "gum"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not implemented — external reference"));

    let o = ewmark(&["lambda0", "--delta", "0.2", "--calibrator", "neglog"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let lambda = v["lambda"].as_f64().unwrap();
    assert!(lambda > 0.0 && lambda < 1.0);
    assert!(v["drift"].as_f64().unwrap() > 0.0);
    let o = ewmark(&["lambda0", "--delta", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let start = Instant::now();
    let o = ewmark(&["simulate", "--replicates", "1", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60));
    for f in ["manifest.json", "summary.json", "curves.csv", "average.dat"] {
        assert!(Path::new(&out).join(f).is_file(), "{f}");
    }
    let o = ewmark(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("seq_type1"));

    let o = Command::new(env!("CARGO_BIN_EXE_ewmark"))
        .args(["report"])
        .env("EWMARK_RESULTS_DIR", dir.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ewmark(&["simulate", "--k", "50", "-T", "40", "--replicates", "3", "--seed", "8", "--detector", "og", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out.join("curves.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.contains("og-ea2") && !a.contains("average"));
}
