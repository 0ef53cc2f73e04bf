use std::path::Path;

use super::stft::{compute_spectrogram, FrameLayout, FreqRange, StftConfig};
use super::timeseries::{parse_csv, parse_wav, TimeSeries};
use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

/// What a payload was recognised as.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Wav,
    SignalCsv,
    SpectrogramCsv,
}

/// Classifies a payload by content: a RIFF header is audio, a CSV whose
/// first row has six fields is a spectrogram, any other CSV is a signal.
pub fn sniff(bytes: &[u8]) -> Result<InputKind> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bytes.starts_with(b"RIFF") {
        return Ok(InputKind::Wav);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| Error::UnsupportedEncoding("neither WAV nor UTF-8 text".into()))?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).ok_or(Error::EmptyInput)?;
    if first.eq_ignore_ascii_case("M,N,f0,df,t0,dt") || first.split(',').count() == 6 {
        Ok(InputKind::SpectrogramCsv)
    } else {
        Ok(InputKind::SignalCsv)
    }
}

/// A spectrogram ready for tracking, with the frame geometry when it was
/// computed here from a signal.
#[derive(Clone, Debug)]
pub struct LoadedInput {
    pub spectrogram: Spectrogram,
    pub layout: Option<FrameLayout>,
    pub kind: InputKind,
}

/// How to turn a signal into a spectrogram.
#[derive(Clone, Copy, Debug)]
pub struct SignalOptions {
    pub stft: StftConfig,
    pub range: FreqRange,
    /// Needed for single-column signal CSV.
    pub sample_rate_hz: Option<f64>,
}

pub fn spectrogram_from_bytes(bytes: &[u8], opts: &SignalOptions) -> Result<LoadedInput> {
    let kind = sniff(bytes)?;
    let signal = match kind {
        InputKind::SpectrogramCsv => {
            let text = std::str::from_utf8(bytes).expect("sniffed as text");
            return Ok(LoadedInput {
                spectrogram: Spectrogram::from_csv_str(text)?,
                layout: None,
                kind,
            });
        }
        InputKind::Wav => parse_wav(bytes)?,
        InputKind::SignalCsv => parse_csv(bytes, opts.sample_rate_hz)?,
    };
    signal_to_input(&signal, opts, kind)
}

fn signal_to_input(signal: &TimeSeries, opts: &SignalOptions, kind: InputKind) -> Result<LoadedInput> {
    let layout = opts.stft.layout(signal.sample_rate_hz(), opts.range.unit)?;
    Ok(LoadedInput {
        spectrogram: compute_spectrogram(signal, &opts.stft, opts.range)?,
        layout: Some(layout),
        kind,
    })
}

pub fn load_spectrogram(path: impl AsRef<Path>, opts: &SignalOptions) -> Result<LoadedInput> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    spectrogram_from_bytes(&bytes, opts)
}
