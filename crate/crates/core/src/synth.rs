//! Ground-truth signals: phase-accumulated sinusoids with controllable
//! frequency dynamics, silent intervals and white Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FrameLayout, FreqUnit, TimeSeries};
use crate::spectrogram::Axis;

/// How a trace's instantaneous frequency evolves, per sample, in the
/// configured unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FreqProcess {
    Constant {
        f: f64,
    },
    /// Gaussian random walk with per-sample step `std`, clipped to the band.
    /// Starts at `start`, or uniformly in the middle 80 % of the band.
    RandomWalk {
        std: f64,
        #[serde(default)]
        start: Option<f64>,
    },
    /// `f[n] = mean + x[n]`, `x[n] = Σ coeffs[i]·x[n-1-i] + e[n]`,
    /// `e ~ N(0, noise_std²)`, clipped to the band.
    Ar {
        coeffs: Vec<f64>,
        noise_std: f64,
        mean: f64,
    },
    /// Linear interpolation through `(time_s, f)` points, held at the ends.
    Piecewise {
        points: Vec<(f64, f64)>,
    },
    /// Another (earlier) trace's frequency plus a constant offset.
    Offset {
        reference: usize,
        offset: f64,
    },
}

fn unit_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub process: FreqProcess,
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
    /// Silent interval `[t1, t2)` in seconds.
    #[serde(default)]
    pub unvoiced: Option<(f64, f64)>,
}

impl TraceSpec {
    pub fn new(process: FreqProcess) -> Self {
        TraceSpec {
            process,
            amplitude: 1.0,
            unvoiced: None,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_unvoiced(mut self, t1: f64, t2: f64) -> Self {
        self.unvoiced = Some((t1, t2));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub unit: FreqUnit,
    /// Band `[lo, hi]` the frequency processes are clipped to.
    pub band: (f64, f64),
    pub traces: Vec<TraceSpec>,
    /// Total sinusoid power over noise power, in dB. `None` means no noise.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    /// 30 Hz, bpm units, 40–240 bpm band, one random-walk trace.
    pub fn rppg(duration_s: f64, walk_std_bpm: f64, snr_db: Option<f64>, seed: u64) -> Self {
        SynthConfig {
            duration_s,
            sample_rate_hz: 30.0,
            unit: FreqUnit::Bpm,
            band: (40.0, 240.0),
            traces: vec![TraceSpec::new(FreqProcess::RandomWalk {
                std: walk_std_bpm,
                start: None,
            })],
            snr_db,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be positive, found {}", self.duration_s));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample rate must be positive, found {}", self.sample_rate_hz));
        }
        if !(self.band.0 < self.band.1 && self.band.0 >= 0.0 && self.band.1.is_finite()) {
            return bad(format!("band {:?} must be increasing and nonnegative", self.band));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad("snr_db must be finite; omit it for a noiseless signal".into());
            }
        }
        if self.traces.iter().any(|t| !(t.amplitude >= 0.0 && t.amplitude.is_finite())) {
            return bad("amplitudes must be finite and nonnegative".into());
        }
        for (i, t) in self.traces.iter().enumerate() {
            match &t.process {
                FreqProcess::Offset { reference, .. } if *reference >= i => {
                    return bad(format!("trace {i} references trace {reference}, which is not earlier"));
                }
                FreqProcess::RandomWalk { std, .. } if !(*std >= 0.0) => {
                    return bad(format!("trace {i} walk std must be nonnegative"));
                }
                FreqProcess::Ar { noise_std, .. } if !(*noise_std >= 0.0) => {
                    return bad(format!("trace {i} AR noise std must be nonnegative"));
                }
                FreqProcess::Piecewise { points } if points.is_empty() => {
                    return bad(format!("trace {i} has no piecewise points"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    /// Noise variance for the configured SNR: `Σ A²/2 / 10^(snr/10)`.
    pub fn noise_variance(&self) -> f64 {
        match self.snr_db {
            None => 0.0,
            Some(snr) => {
                let power: f64 = self.traces.iter().map(|t| t.amplitude * t.amplitude / 2.0).sum();
                power / 10f64.powf(snr / 10.0)
            }
        }
    }
}

/// A synthesized signal with its per-sample ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub signal: TimeSeries,
    /// Noise-free part of the signal.
    pub clean: Vec<f64>,
    /// Per-trace instantaneous frequency, per sample, in the configured unit.
    pub freqs: Vec<Vec<f64>>,
    /// Per-trace presence, per sample.
    pub voiced: Vec<Vec<bool>>,
    pub unit: FreqUnit,
}

/// Ground truth sampled on a frame grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub freqs: Vec<Vec<f64>>,
    pub voiced: Vec<Vec<bool>>,
    pub time_axis: Axis,
}

impl GroundTruth {
    pub fn frames(&self) -> usize {
        self.freqs.first().map_or(0, Vec::len)
    }

    /// CSV `frame,time_s,f_0,v_0,f_1,v_1,...`.
    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("frame,time_s");
        for l in 0..self.freqs.len() {
            let _ = write!(out, ",f_{l},v_{l}");
        }
        out.push('\n');
        for n in 0..self.frames() {
            let _ = write!(out, "{n},{}", self.time_axis.at(n));
            for (f, v) in self.freqs.iter().zip(&self.voiced) {
                let _ = write!(out, ",{},{}", f[n], u8::from(v[n]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.len() < 2 || columns[0] != "frame" || columns[1] != "time_s" || columns.len() % 2 != 0 {
            return Err(Error::malformed(1, format!("unexpected ground-truth header {header:?}")));
        }
        let traces = (columns.len() - 2) / 2;
        let mut freqs = vec![Vec::new(); traces];
        let mut voiced = vec![Vec::new(); traces];
        let mut times = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(Error::malformed(line_no, format!("expected {} fields", columns.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::malformed(line_no, format!("bad number {s:?}")));
            times.push(num(fields[1])?);
            for l in 0..traces {
                freqs[l].push(num(fields[2 + 2 * l])?);
                voiced[l].push(match fields[3 + 2 * l] {
                    "1" => true,
                    "0" => false,
                    other => return Err(Error::malformed(line_no, format!("voiced must be 0 or 1, found {other:?}"))),
                });
            }
        }
        if times.is_empty() {
            return Err(Error::EmptyInput);
        }
        let step = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        Ok(GroundTruth {
            freqs,
            voiced,
            time_axis: Axis::new(times[0], step),
        })
    }
}

impl Synthesis {
    /// Ground truth at each frame's centre sample.
    pub fn ground_truth(&self, layout: &FrameLayout) -> GroundTruth {
        let frames = layout.frame_count(self.signal.len());
        let centre = |n: usize| (n * layout.hop + layout.window / 2).min(self.signal.len() - 1);
        GroundTruth {
            freqs: self.freqs.iter().map(|f| (0..frames).map(|n| f[centre(n)]).collect()).collect(),
            voiced: self.voiced.iter().map(|v| (0..frames).map(|n| v[centre(n)]).collect()).collect(),
            time_axis: layout.time_axis(),
        }
    }
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let len = cfg.samples();
    if len == 0 {
        return Err(Error::EmptyInput);
    }
    let fs = cfg.sample_rate_hz;
    let per_hz = cfg.unit.per_hz();
    let (lo, hi) = cfg.band;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut freqs: Vec<Vec<f64>> = Vec::with_capacity(cfg.traces.len());
    let mut voiced = Vec::with_capacity(cfg.traces.len());
    let mut clean = vec![0.0; len];
    for spec in &cfg.traces {
        let f = frequency_path(&spec.process, len, fs, (lo, hi), &freqs, &mut rng)?;
        let v: Vec<bool> = (0..len)
            .map(|n| {
                let t = n as f64 / fs;
                spec.unvoiced.map_or(true, |(t1, t2)| !(t >= t1 && t < t2))
            })
            .collect();
        let mut phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for n in 0..len {
            if n > 0 {
                phase += std::f64::consts::TAU * f[n] / per_hz / fs;
            }
            if v[n] {
                clean[n] += spec.amplitude * phase.sin();
            }
        }
        freqs.push(f);
        voiced.push(v);
    }
    let variance = cfg.noise_variance();
    let mut samples = clean.clone();
    if variance > 0.0 {
        let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive std");
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    Ok(Synthesis {
        signal: TimeSeries::new(samples, fs)?,
        clean,
        freqs,
        voiced,
        unit: cfg.unit,
    })
}

fn frequency_path(
    process: &FreqProcess,
    len: usize,
    fs: f64,
    (lo, hi): (f64, f64),
    earlier: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let clip = |f: f64| f.clamp(lo, hi);
    Ok(match process {
        FreqProcess::Constant { f } => vec![*f; len],
        FreqProcess::RandomWalk { std, start } => {
            let margin = 0.1 * (hi - lo);
            let mut f = start.unwrap_or_else(|| rng.gen_range(lo + margin..hi - margin));
            let step = Normal::new(0.0, *std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            (0..len)
                .map(|n| {
                    if n > 0 {
                        f = clip(f + step.sample(rng));
                    }
                    f
                })
                .collect()
        }
        FreqProcess::Ar { coeffs, noise_std, mean } => {
            let innovation = Normal::new(0.0, *noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut history = vec![0.0; coeffs.len()];
            (0..len)
                .map(|_| {
                    let x: f64 = coeffs.iter().zip(&history).map(|(a, h)| a * h).sum::<f64>() + innovation.sample(rng);
                    if !history.is_empty() {
                        history.rotate_right(1);
                        history[0] = x;
                    }
                    clip(mean + x)
                })
                .collect()
        }
        FreqProcess::Piecewise { points } => (0..len)
            .map(|n| {
                let t = n as f64 / fs;
                let after = points.iter().position(|p| p.0 > t);
                match after {
                    Some(0) => points[0].1,
                    None => points[points.len() - 1].1,
                    Some(i) => {
                        let (t0, f0) = points[i - 1];
                        let (t1, f1) = points[i];
                        f0 + (f1 - f0) * (t - t0) / (t1 - t0)
                    }
                }
            })
            .collect(),
        FreqProcess::Offset { reference, offset } => earlier[*reference].iter().map(|f| f + offset).collect(),
    })
}

/// Frequency offset giving a trace relative separation of `trs` for a
/// rectangular window of `window_len_s` seconds, whose main lobe spans
/// `2 / window_len_s` Hz between nulls.
pub fn trs_offset(trs: f64, window_len_s: f64, unit: FreqUnit) -> f64 {
    trs * 2.0 / window_len_s * unit.per_hz()
}
