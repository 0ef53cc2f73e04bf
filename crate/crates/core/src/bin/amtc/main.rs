use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use amtc::bench;
use amtc::carve::MultiTraceResult;
use amtc::config::RunConfig;
use amtc::dp::{parse_trace_csv, ConstraintRegion};
use amtc::error::Error;
use amtc::ingest::{load_spectrogram, sniff, InputKind};
use amtc::metrics::{MetricReport, TraceSet};
use amtc::online::{OnlineEstimate, OnlineTracker};
use amtc::service::{self, ServiceConfig};
use amtc::spectrogram::{Axis, SpectrogramCsvReader};
use amtc::synth::{synthesize, GroundTruth, SynthConfig};

/// Detect and track weak frequency traces in noisy spectrograms.
#[derive(Parser)]
#[command(name = "amtc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offline multi-trace tracking of a WAV, signal CSV or spectrogram CSV.
    Track(TrackArgs),
    /// Streaming tracking; prints one JSON object per emitted frame.
    TrackOnline(OnlineArgs),
    /// Synthesize test signals with ground truth.
    Synth(SynthArgs),
    /// Score an estimate against ground truth.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Synthesize, track and score seeded trials; prints one CSV row per trial.
    Bench(BenchArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Transition band half-width in bins.
    #[arg(long, short)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta_rer: Option<f64>,
    #[arg(long)]
    delta_f: Option<usize>,
    #[arg(long)]
    delta1: Option<usize>,
    #[arg(long)]
    delta2: Option<usize>,
    /// Sample rate for single-column signal CSV.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Number of traces to extract.
    #[arg(long = "traces", short = 'L')]
    traces: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| input_error(e, path))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.k {
            cfg.model.k = v;
        }
        if let Some(v) = self.lambda {
            cfg.model.lambda = v;
        }
        if let Some(v) = self.delta_rer {
            cfg.detection.delta_rer = v;
        }
        if let Some(v) = self.delta_f {
            cfg.detection.delta_f = Some(v);
        }
        if let Some(v) = self.delta1 {
            cfg.detection.delta1 = v;
        }
        if let Some(v) = self.delta2 {
            cfg.detection.delta2 = v;
        }
        if let Some(v) = self.sample_rate {
            cfg.sample_rate_hz = Some(v);
        }
        if let Some(v) = self.traces {
            cfg.traces = v;
            if cfg.model.per_trace_k.as_ref().is_some_and(|ks| ks.len() != v) {
                cfg.model.per_trace_k = None;
            }
        }
        cfg.validate().map_err(CliError::Lib)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrackArgs {
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    /// JSON list of constraint regions.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Writes result.json and trace_<l>.csv here; the JSON also goes to stdout.
    #[arg(long, short)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OnlineArgs {
    /// Input file, or `-` for a spectrogram CSV on standard input.
    input: String,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum SignalFormat {
    #[default]
    Csv,
    Wav,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Signal-to-noise ratio in dB; omit for the configured value.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    format: SignalFormat,
    /// Also write the spectrogram CSV.
    #[arg(long)]
    spectrogram: bool,
    /// Number of trials, seeded `seed + i`, written to trial_<i> subdirectories.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trace CSV or result JSON.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth CSV from `synth`, or a trace CSV.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = amtc::metrics::DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    /// Directory with the browser front end.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    max_jobs: usize,
    #[arg(long, default_value_t = 64)]
    max_body_mb: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// SNR levels in dB; repeat for several.
    #[arg(long = "snr", allow_hyphen_values = true)]
    snrs: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

enum CliError {
    Usage(String),
    Lib(Error),
    InputNotFound(PathBuf),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::InputNotFound(_) => 2,
            CliError::Lib(e) if e.is_input_error() => 2,
            CliError::Lib(_) => 3,
        }
    }

    fn body(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage".to_string(), m.clone()),
            CliError::InputNotFound(p) => ("input_not_found".to_string(), format!("input not found: {}", p.display())),
            CliError::Lib(e) => (e.kind().to_string(), e.to_string()),
        };
        json!({ "error": { "kind": kind, "message": message } })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn input_error(e: Error, path: &Path) -> CliError {
    match &e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::InputNotFound(path.to_path_buf()),
        _ => CliError::Lib(e),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::InputNotFound(path.to_path_buf())
        } else {
            CliError::Usage(format!("cannot read {}: {e}", path.display()))
        }
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::TrackOnline(a) => cmd_track_online(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.body());
            ExitCode::from(e.exit_code())
        }
    }
}

fn cmd_track(a: TrackArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(path) = &a.constraints {
        let text = read_text(path)?;
        cfg.constraints = serde_json::from_str::<Vec<ConstraintRegion>>(&text)
            .map_err(|e| CliError::Lib(Error::InvalidConfig(format!("constraints: {e}"))))?;
        cfg.validate()?;
    }
    let loaded = load_spectrogram(&a.input, &cfg.signal_options()).map_err(|e| input_error(e, &a.input))?;
    let result = cfg.run_offline(&loaded.spectrogram, loaded.layout.as_ref())?;
    let json = result.to_json();
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_file(&dir.join("result.json"), &json)?;
        for l in 0..result.len() {
            let csv = result.traces[l].to_csv_string(result.freq_axis, Some(&result.masks[l]));
            write_file(&dir.join(format!("trace_{l}.csv")), &csv)?;
        }
    }
    println!("{json}");
    Ok(())
}

fn emit(out: &mut impl Write, e: &OnlineEstimate, freq: Axis, time: Axis) -> Result<(), CliError> {
    let mut value = serde_json::to_value(e).expect("estimate serializes");
    value["time_s"] = json!(time.at(e.frame));
    value["freqs"] = json!(e.bins.iter().map(|b| freq.at(*b)).collect::<Vec<_>>());
    writeln!(out, "{value}").map_err(|e| CliError::Usage(format!("stdout: {e}")))
}

fn cmd_track_online(a: OnlineArgs) -> Result<(), CliError> {
    let mut cfg = a.common.resolve()?;
    if let Some(k1) = a.k1 {
        cfg.online.k1 = k1;
    }
    if let Some(k2) = a.k2 {
        cfg.online.k2 = k2;
    }
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let streamed = if a.input == "-" {
        Some(Box::new(std::io::stdin().lock()) as Box<dyn BufRead>)
    } else {
        let path = Path::new(&a.input);
        let head = std::fs::read(path).map_err(|e| input_error(Error::Io { path: path.into(), source: e }, path))?;
        match sniff(&head)? {
            InputKind::SpectrogramCsv => Some(Box::new(std::io::Cursor::new(head)) as Box<dyn BufRead>),
            _ => None,
        }
    };
    if let Some(input) = streamed {
        let mut reader = SpectrogramCsvReader::new(input)?;
        let header = reader.header();
        let mut tracker = OnlineTracker::new(cfg.online_params(None, header.bins)?)?;
        while let Some(column) = reader.next_frame()? {
            if let Some(e) = tracker.push_frame(&column)? {
                emit(&mut out, &e, header.freq, header.time)?;
                out.flush().map_err(|e| CliError::Usage(format!("stdout: {e}")))?;
            }
        }
        for e in tracker.finalize() {
            emit(&mut out, &e, header.freq, header.time)?;
        }
    } else {
        let path = Path::new(&a.input);
        let loaded = load_spectrogram(path, &cfg.signal_options()).map_err(|e| input_error(e, path))?;
        let z = &loaded.spectrogram;
        let params = cfg.online_params(loaded.layout.as_ref(), z.bins())?;
        for e in amtc::online::track_online(z, params)? {
            emit(&mut out, &e, z.freq_axis(), z.time_axis())?;
        }
    }
    out.flush().map_err(|e| CliError::Usage(format!("stdout: {e}")))
}

fn synth_config(cfg: &RunConfig, seed: Option<u64>, snr: Option<f64>, duration: Option<f64>) -> Result<SynthConfig, CliError> {
    let mut s = cfg
        .synth
        .clone()
        .unwrap_or_else(|| SynthConfig::rppg(180.0, 0.005, Some(-8.0), 0));
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(snr) = snr {
        s.snr_db = Some(snr);
    }
    if let Some(d) = duration {
        s.duration_s = d;
    }
    s.validate()?;
    Ok(s)
}

fn write_synthesis(cfg: &RunConfig, s: &SynthConfig, dir: &Path, format: SignalFormat, spectrogram: bool) -> Result<(), CliError> {
    create_dir(dir)?;
    let synthesis = synthesize(s)?;
    match format {
        SignalFormat::Csv => synthesis.signal.write_csv(dir.join("signal.csv"))?,
        SignalFormat::Wav => synthesis.signal.write_wav(dir.join("signal.wav"))?,
    }
    let layout = cfg.stft.layout(s.sample_rate_hz, s.unit)?;
    write_file(&dir.join("ground_truth.csv"), &synthesis.ground_truth(&layout).to_csv_string())?;
    if spectrogram {
        let z = amtc::ingest::compute_spectrogram(&synthesis.signal, &cfg.stft, cfg.range)?;
        z.write_csv(dir.join("spectrogram.csv"))?;
    }
    write_file(&dir.join("synth.json"), &serde_json::to_string_pretty(s).expect("config serializes"))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = a.common.resolve()?;
    let s = synth_config(&cfg, a.seed, a.snr, a.duration)?;
    match a.trials {
        None => write_synthesis(&cfg, &s, &a.out_dir, a.format, a.spectrogram),
        Some(n) => {
            for i in 0..n {
                let trial = SynthConfig {
                    seed: s.seed.wrapping_add(i as u64),
                    ..s.clone()
                };
                write_synthesis(&cfg, &trial, &a.out_dir.join(format!("trial_{i:04}")), a.format, a.spectrogram)?;
            }
            Ok(())
        }
    }
}

/// Per-trace frequencies and masks.
type Traces = (Vec<Vec<f64>>, Vec<Vec<bool>>);

fn read_estimate(path: &Path) -> Result<Traces, CliError> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('{') {
        let r: MultiTraceResult = serde_json::from_str(&text)
            .map_err(|e| CliError::Lib(Error::Malformed { line: e.line(), message: e.to_string() }))?;
        Ok(((0..r.len()).map(|l| r.frequencies(l)).collect(), r.masks))
    } else {
        let t = parse_trace_csv(&text)?;
        let voiced = t.voiced.unwrap_or_else(|| vec![true; t.frequencies.len()]);
        Ok((vec![t.frequencies], vec![voiced]))
    }
}

fn read_truth(path: &Path) -> Result<Traces, CliError> {
    let text = read_text(path)?;
    if text.trim_start().starts_with("frame,time_s") {
        let gt = GroundTruth::from_csv_str(&text)?;
        Ok((gt.freqs, gt.voiced))
    } else {
        read_estimate(path)
    }
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let (ef, ev) = read_estimate(&a.est)?;
    let (gf, gv) = read_truth(&a.gt)?;
    let report = MetricReport::evaluate(TraceSet::new(&ef, &ev), TraceSet::new(&gf, &gv), a.tau)?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let cfg = ServiceConfig {
        max_jobs: a.max_jobs,
        max_body_bytes: a.max_body_mb * 1024 * 1024,
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(e.to_string()))?;
    eprintln!("listening on http://{}", a.addr);
    runtime
        .block_on(service::serve(a.addr, cfg))
        .map_err(|e| CliError::Usage(format!("cannot serve on {}: {e}", a.addr)))
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let cfg = a.common.resolve()?;
    let base = synth_config(&cfg, a.seed, None, None)?;
    let snrs: Vec<Option<f64>> = if a.snrs.is_empty() {
        vec![base.snr_db]
    } else {
        a.snrs.iter().copied().map(Some).collect()
    };
    let trials = bench::run_batch(&cfg, &base, &snrs, a.trials)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut write = |line: String| writeln!(out, "{line}").map_err(|e| CliError::Usage(format!("stdout: {e}")));
    write(bench::csv_header())?;
    for t in &trials {
        write(bench::csv_row(&cfg, t))?;
    }
    Ok(())
}
