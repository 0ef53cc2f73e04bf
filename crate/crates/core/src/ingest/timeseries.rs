use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled real signal.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeSeriesFormat {
    Wav,
    Csv,
}

impl TimeSeriesFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "wav" | "wave" => Some(TimeSeriesFormat::Wav),
            "csv" | "txt" => Some(TimeSeriesFormat::Csv),
            _ => None,
        }
    }
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, found {sample_rate_hz}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("samples must be finite".into()));
        }
        Ok(TimeSeries {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Integer-factor decimation with a `factor`-tap moving-average pre-filter.
    pub fn decimate(&self, factor: usize) -> Result<TimeSeries> {
        if factor == 0 {
            return Err(Error::InvalidConfig("decimation factor must be ≥ 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let out: Vec<f64> = self
            .samples
            .chunks_exact(factor)
            .map(|block| block.iter().sum::<f64>() / factor as f64)
            .collect();
        if out.is_empty() {
            return Err(Error::SignalTooShort {
                samples: self.samples.len(),
                window: factor,
            });
        }
        TimeSeries::new(out, self.sample_rate_hz / factor as f64)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz.round() as u32,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let peak = self.samples.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        // Normalize only when the signal would clip.
        let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
        let to_io = |e: hound::Error| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::UnsupportedEncoding(other.to_string()),
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
        for s in &self.samples {
            let q = (s * gain * i16::MAX as f64).round() as i16;
            writer.write_sample(q).map_err(to_io)?;
        }
        writer.finalize().map_err(to_io)
    }

    /// CSV with a `time_s,amplitude` header; values are written losslessly.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("time_s,amplitude\n");
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i as f64 / self.sample_rate_hz, s));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Loads a signal from disk.
///
/// CSV rows are either `amplitude` (implicit index, `sample_rate_hz`
/// required) or `time,amplitude` (rate inferred from the time column when
/// not given). One non-numeric header line is tolerated.
pub fn load_timeseries(
    path: impl AsRef<Path>,
    format: TimeSeriesFormat,
    sample_rate_hz: Option<f64>,
) -> Result<TimeSeries> {
    let path = path.as_ref();
    match format {
        TimeSeriesFormat::Wav => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_wav(&bytes)
        }
        TimeSeriesFormat::Csv => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            parse_csv(std::io::BufReader::new(file), sample_rate_hz)
        }
    }
}

/// Decodes a mono PCM (8/16/24/32-bit integer or 32-bit float) WAV image.
pub fn parse_wav(bytes: &[u8]) -> Result<TimeSeries> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes))
        .map_err(|e| Error::UnsupportedEncoding(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels, only mono is supported",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let full_scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
        }
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
    }
    .map_err(|e| Error::UnsupportedEncoding(e.to_string()))?;
    TimeSeries::new(samples, spec.sample_rate as f64)
}

pub fn parse_csv(input: impl BufRead, sample_rate_hz: Option<f64>) -> Result<TimeSeries> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut columns = None;
    let mut seen_data = false;
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::malformed(line_no, e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if !seen_data && idx == 0 => continue,
            Err(_) => return Err(Error::malformed(line_no, format!("non-numeric row {trimmed:?}"))),
        };
        seen_data = true;
        let width = *columns.get_or_insert(values.len());
        if values.len() != width || !(1..=2).contains(&width) {
            return Err(Error::malformed(
                line_no,
                format!("expected 1 or 2 consistent columns, found {}", values.len()),
            ));
        }
        if width == 2 {
            times.push(values[0]);
            samples.push(values[1]);
        } else {
            samples.push(values[0]);
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rate = match sample_rate_hz {
        Some(rate) => rate,
        None if times.len() >= 2 => {
            let span = times[times.len() - 1] - times[0];
            if !(span > 0.0) {
                return Err(Error::malformed(1, "time column must be increasing"));
            }
            (times.len() - 1) as f64 / span
        }
        None => {
            return Err(Error::InvalidConfig(
                "sample rate required for single-column CSV".into(),
            ))
        }
    };
    TimeSeries::new(samples, rate)
}
