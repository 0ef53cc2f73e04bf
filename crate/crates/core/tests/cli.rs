use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn amtc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amtc"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    amtc().args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn missing_input_exits_2() {
    let out = run(&["track", "/nonexistent/z.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "input_not_found");
    assert!(err["error"]["message"].as_str().unwrap().starts_with("input not found"));
}

#[test]
fn track_reproduces_the_committed_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("ridge_spectrogram.csv");
    let out = run(&["track", input.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = std::fs::read_to_string(dir.path().join("trace_0.csv")).unwrap();
    let want = std::fs::read_to_string(fixture("ridge_expected_trace.csv")).unwrap();
    assert_eq!(got, want);
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(stdout, saved);
}

#[test]
fn track_writes_one_csv_per_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("ridge_spectrogram.csv");
    let out = run(&["track", input.to_str().unwrap(), "-L", "3", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    for l in 0..3 {
        assert!(dir.path().join(format!("trace_{l}.csv")).exists());
    }
    assert!(!dir.path().join("trace_3.csv").exists());
}

fn online_records(stdout: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn streaming_from_stdin_emits_every_frame() {
    let text = std::fs::read(fixture("ridge_spectrogram.csv")).unwrap();
    let mut child = amtc()
        .args(["track-online", "-", "--k1", "5", "--k2", "4"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&text).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = online_records(&out.stdout);
    assert_eq!(records.len(), 40);
    for (n, r) in records.iter().enumerate() {
        assert_eq!(r["frame"], n);
        assert!((r["time_s"].as_f64().unwrap() - n as f64 * 0.1).abs() < 1e-9);
    }
}

#[test]
fn full_window_streaming_equals_offline() {
    let input = fixture("ridge_spectrogram.csv");
    let online = run(&["track-online", input.to_str().unwrap(), "--k1", "39", "--k2", "39"]);
    assert!(online.status.success());
    let offline = run(&["track", input.to_str().unwrap()]);
    let result: Value = serde_json::from_slice(&offline.stdout).unwrap();
    let offline_bins: Vec<u64> = result["traces"][0].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let online_bins: Vec<u64> = online_records(&online.stdout).iter().map(|r| r["bins"][0].as_u64().unwrap()).collect();
    assert_eq!(online_bins, offline_bins);
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&["synth", "--seed", "7", "--duration", "20", "--out-dir", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["signal.csv", "ground_truth.csv", "synth.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn synth_noise_power_follows_snr() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--seed",
        "3",
        "--snr",
        "0",
        "--duration",
        "600",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let file = std::fs::File::open(dir.path().join("signal.csv")).unwrap();
    let ts = amtc::ingest::parse_csv(std::io::BufReader::new(file), Some(30.0)).unwrap();
    let n = ts.len() as f64;
    let mean = ts.samples().iter().sum::<f64>() / n;
    let power = ts.samples().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    // Unit sinusoid (0.5) plus noise at 0 dB (0.5).
    assert!((power - 1.0).abs() < 0.05, "{power}");
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--seed", "1", "--duration", "20", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let gt = dir.path().join("ground_truth.csv");
    let trace = fixture("ridge_expected_trace.csv");
    let out = run(&["eval", "--est", trace.to_str().unwrap(), "--gt", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rmse"], 0.0);
    assert_eq!(report["erate"], 0.0);
    assert_eq!(report["ecount"], 0.0);

    let out = run(&["eval", "--est", trace.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "dimension_mismatch");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": {"k": 2, "bogus": 1}}"#).unwrap();
    let input = fixture("ridge_spectrogram.csv");
    let out = run(&["track", input.to_str().unwrap(), "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"traces": 3}"#).unwrap();
    let input = fixture("ridge_spectrogram.csv");
    let from_file = run(&["track", input.to_str().unwrap(), "-c", cfg.to_str().unwrap()]);
    let result: Value = serde_json::from_slice(&from_file.stdout).unwrap();
    assert_eq!(result["traces"].as_array().unwrap().len(), 3);
    let overridden = run(&["track", input.to_str().unwrap(), "-c", cfg.to_str().unwrap(), "-L", "1"]);
    let result: Value = serde_json::from_slice(&overridden.stdout).unwrap();
    assert_eq!(result["traces"].as_array().unwrap().len(), 1);
}

#[test]
fn unsatisfiable_constraints_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let zeros: String = std::iter::once("8,4,0,1,0,1".to_string())
        .chain((0..4).map(|_| vec!["0"; 8].join(",")))
        .collect::<Vec<_>>()
        .join("\n");
    let input = dir.path().join("zeros.csv");
    std::fs::write(&input, zeros).unwrap();
    let regions = dir.path().join("regions.json");
    std::fs::write(&regions, r#"[{"frames": [0, 3], "bins": [6, 7]}]"#).unwrap();
    let out = run(&[
        "track",
        input.to_str().unwrap(),
        "--delta-f",
        "1",
        "--constraints",
        regions.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"]["kind"], "constraint_unsatisfiable");
}

#[test]
fn bench_prints_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let synth = amtc::synth::SynthConfig::rppg(20.0, 0.005, Some(0.0), 5);
    std::fs::write(&cfg, format!(r#"{{"synth": {}}}"#, serde_json::to_string(&synth).unwrap())).unwrap();
    let out = run(&["bench", "-c", cfg.to_str().unwrap(), "--trials", "2", "--snr", "0", "--snr", "-5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("seed,snr_db,"));
}
