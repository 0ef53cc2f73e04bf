//! Signal ingestion: time series I/O, STFT magnitude maps and harmonic strips.

mod harmonic;
mod input;
mod stft;
mod timeseries;

pub use harmonic::{combining_weights, harmonic_combine, harmonic_strips, local_snr};
pub use input::{load_spectrogram, sniff, spectrogram_from_bytes, InputKind, LoadedInput, SignalOptions};
pub use stft::{compute_spectrogram, FrameLayout, FreqRange, FreqUnit, StftConfig, WindowShape};
pub use timeseries::{load_timeseries, parse_csv, parse_wav, TimeSeries, TimeSeriesFormat};
