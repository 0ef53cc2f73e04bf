//! Framed DFT magnitude maps restricted to a frequency band.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};
use crate::spectrogram::{Axis, Spectrogram};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    #[default]
    Rectangular,
}

/// Frequency unit used on spectrogram axes and in ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqUnit {
    #[default]
    Hz,
    Bpm,
}

impl FreqUnit {
    /// Multiplier converting Hz into this unit.
    pub fn per_hz(self) -> f64 {
        match self {
            FreqUnit::Hz => 1.0,
            FreqUnit::Bpm => 60.0,
        }
    }
}

/// Band of frequencies kept in the output, inclusive, in `unit`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqRange {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub unit: FreqUnit,
}

impl FreqRange {
    pub fn hz(lo: f64, hi: f64) -> Self {
        FreqRange {
            lo,
            hi,
            unit: FreqUnit::Hz,
        }
    }

    pub fn bpm(lo: f64, hi: f64) -> Self {
        FreqRange {
            lo,
            hi,
            unit: FreqUnit::Bpm,
        }
    }
}

/// STFT parameters.
///
/// The DFT length is `window * zero_pad_factor`, unless `bin_spacing` is
/// given, in which case it is `round(sample_rate / bin_spacing)`. The second
/// form reaches spacings like 0.004 Hz that are not an integer fraction of
/// the window resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_len_s: f64,
    #[serde(default)]
    pub overlap_fraction: f64,
    #[serde(default = "one")]
    pub zero_pad_factor: u32,
    /// Target bin spacing, in the unit of the requested [`FreqRange`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_spacing: Option<f64>,
    #[serde(default)]
    pub window_shape: WindowShape,
}

fn one() -> u32 {
    1
}

impl StftConfig {
    pub fn rectangular(window_len_s: f64, overlap_fraction: f64, zero_pad_factor: u32) -> Self {
        StftConfig {
            window_len_s,
            overlap_fraction,
            zero_pad_factor,
            bin_spacing: None,
            window_shape: WindowShape::Rectangular,
        }
    }

    /// 10 s rectangular window, 98 % overlap, bins 0.17 bpm apart.
    pub fn rppg() -> Self {
        StftConfig {
            window_len_s: 10.0,
            overlap_fraction: 0.98,
            zero_pad_factor: 1,
            bin_spacing: Some(0.17),
            window_shape: WindowShape::Rectangular,
        }
    }

    /// 8 s rectangular window, no overlap, bins 0.004 Hz apart.
    pub fn enf() -> Self {
        StftConfig {
            window_len_s: 8.0,
            overlap_fraction: 0.0,
            zero_pad_factor: 1,
            bin_spacing: Some(0.004),
            window_shape: WindowShape::Rectangular,
        }
    }

    pub fn with_bin_spacing(mut self, spacing: f64) -> Self {
        self.bin_spacing = Some(spacing);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_len_s > 0.0 && self.window_len_s.is_finite()) {
            return Err(Error::InvalidConfig("window_len_s must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidConfig("overlap_fraction must be in [0, 1)".into()));
        }
        if self.zero_pad_factor == 0 {
            return Err(Error::InvalidConfig("zero_pad_factor must be ≥ 1".into()));
        }
        if let Some(spacing) = self.bin_spacing {
            if !(spacing > 0.0 && spacing.is_finite()) {
                return Err(Error::InvalidConfig("bin_spacing must be positive".into()));
            }
        }
        Ok(())
    }

    /// Resolves the sample-domain geometry for a given sample rate.
    pub fn layout(&self, sample_rate_hz: f64, unit: FreqUnit) -> Result<FrameLayout> {
        self.validate()?;
        let window = (self.window_len_s * sample_rate_hz).round() as usize;
        if window < 2 {
            return Err(Error::InvalidConfig(format!(
                "window of {window} samples; need at least 2"
            )));
        }
        let hop = ((window as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1);
        let dft_len = match self.bin_spacing {
            Some(spacing) => (sample_rate_hz * unit.per_hz() / spacing).round() as usize,
            None => window * self.zero_pad_factor as usize,
        };
        if dft_len < window {
            return Err(Error::InvalidConfig(format!(
                "DFT length {dft_len} shorter than the {window}-sample window"
            )));
        }
        Ok(FrameLayout {
            window,
            hop,
            dft_len,
            sample_rate_hz,
        })
    }
}

/// Sample-domain framing derived from a [`StftConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameLayout {
    pub window: usize,
    pub hop: usize,
    pub dft_len: usize,
    pub sample_rate_hz: f64,
}

impl FrameLayout {
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            (samples - self.window) / self.hop + 1
        }
    }

    /// Bin spacing in Hz.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz / self.dft_len as f64
    }

    /// Frame `n` is stamped at the centre of its window.
    pub fn time_axis(&self) -> Axis {
        Axis::new(
            self.window as f64 / 2.0 / self.sample_rate_hz,
            self.hop as f64 / self.sample_rate_hz,
        )
    }

    /// Half-width, in bins, of a rectangular window's main lobe.
    pub fn main_lobe_half_width(&self) -> usize {
        (self.dft_len as f64 / self.window as f64).ceil() as usize
    }
}

/// Magnitude STFT of `ts`, keeping only DFT bins inside `range`.
pub fn compute_spectrogram(ts: &TimeSeries, cfg: &StftConfig, range: FreqRange) -> Result<Spectrogram> {
    let layout = cfg.layout(ts.sample_rate_hz(), range.unit)?;
    if ts.len() < layout.window {
        return Err(Error::SignalTooShort {
            samples: ts.len(),
            window: layout.window,
        });
    }
    let per_hz = range.unit.per_hz();
    let bin_hz = layout.bin_hz();
    let nyquist_bin = layout.dft_len / 2;
    let lo_hz = range.lo / per_hz;
    let hi_hz = range.hi / per_hz;
    if !(lo_hz <= hi_hz) || lo_hz.is_nan() {
        return Err(Error::InvalidConfig(format!(
            "frequency range [{}, {}] is empty",
            range.lo, range.hi
        )));
    }
    // Small tolerance so range edges that sit on a bin are kept.
    let eps = 1e-9;
    let first = ((lo_hz / bin_hz) - eps).ceil().max(0.0) as usize;
    let last = (((hi_hz / bin_hz) + eps).floor() as usize).min(nyquist_bin);
    if first > last {
        return Err(Error::InvalidConfig(format!(
            "no DFT bins inside [{}, {}] at spacing {}",
            range.lo,
            range.hi,
            bin_hz * per_hz
        )));
    }
    let frames = layout.frame_count(ts.len());

    let fft = FftPlanner::<f64>::new().plan_fft_forward(layout.dft_len);
    let samples = ts.samples();
    let columns: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map_init(
            || {
                (
                    vec![Complex::new(0.0, 0.0); layout.dft_len],
                    vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()],
                )
            },
            |(buf, scratch), n| {
                let start = n * layout.hop;
                for (dst, src) in buf.iter_mut().zip(&samples[start..start + layout.window]) {
                    *dst = Complex::new(*src, 0.0);
                }
                buf[layout.window..].fill(Complex::new(0.0, 0.0));
                fft.process_with_scratch(buf, scratch);
                buf[first..=last].iter().map(|c| c.norm()).collect()
            },
        )
        .collect();

    Spectrogram::from_columns(
        &columns,
        Axis::new(first as f64 * bin_hz * per_hz, bin_hz * per_hz),
        layout.time_axis(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, seconds: f64, amp: f64) -> TimeSeries {
        let n = (rate * seconds) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin())
            .collect();
        TimeSeries::new(samples, rate).unwrap()
    }

    #[test]
    fn on_bin_sinusoid_peaks_at_its_bin() {
        // 100 Hz rate, 2 s window, 4x padding: spacing 0.125 Hz; 10 Hz is on-bin.
        let ts = sine(10.0, 100.0, 12.0, 1.0);
        let cfg = StftConfig::rectangular(2.0, 0.5, 4);
        let z = compute_spectrogram(&ts, &cfg, FreqRange::hz(5.0, 15.0)).unwrap();
        let target = z.freq_axis().nearest(10.0, z.bins());
        assert!((z.freq_of_bin(target) - 10.0).abs() < 1e-9);
        for column in z.columns() {
            let argmax = column
                .iter()
                .enumerate()
                .fold(0, |best, (m, v)| if *v > column[best] { m } else { best });
            assert_eq!(argmax, target);
        }
    }

    #[test]
    fn frame_count_matches_hop_formula() {
        let ts = sine(3.0, 50.0, 7.3, 1.0);
        let cfg = StftConfig::rectangular(1.0, 0.75, 1);
        let layout = cfg.layout(50.0, FreqUnit::Hz).unwrap();
        let z = compute_spectrogram(&ts, &cfg, FreqRange::hz(0.0, 25.0)).unwrap();
        assert_eq!(layout.hop, 13); // round(50 * 0.25) = 12.5 -> 13
        assert_eq!(z.frames(), (ts.len() - 50) / 13 + 1);
    }

    #[test]
    fn dc_signal_vanishes_off_dc_without_padding() {
        let ts = TimeSeries::new(vec![3.0; 400], 100.0).unwrap();
        let cfg = StftConfig::rectangular(1.0, 0.0, 1);
        let with_dc = compute_spectrogram(&ts, &cfg, FreqRange::hz(0.0, 20.0)).unwrap();
        let without = compute_spectrogram(&ts, &cfg, FreqRange::hz(0.5, 20.0)).unwrap();
        let dc_peak = with_dc.values().iter().cloned().fold(0.0, f64::max);
        let residual = without.values().iter().cloned().fold(0.0, f64::max);
        assert!(dc_peak > 299.0);
        assert!(residual < 1e-9 * dc_peak);
    }

    #[test]
    fn enf_layout_geometry() {
        let layout = StftConfig::enf().layout(1000.0, FreqUnit::Hz).unwrap();
        assert_eq!(layout.window, 8000);
        assert_eq!(layout.hop, 8000);
        assert_eq!(layout.dft_len, 250_000);
        assert!((layout.bin_hz() - 0.004).abs() < 1e-15);
        assert_eq!(layout.hop as f64 / 1000.0, 8.0);
    }

    #[test]
    fn rppg_layout_geometry() {
        let layout = StftConfig::rppg().layout(30.0, FreqUnit::Bpm).unwrap();
        assert_eq!(layout.window, 300);
        assert_eq!(layout.hop, 6);
        assert!((layout.bin_hz() * 60.0 - 0.17).abs() < 1e-4);
    }

    #[test]
    fn errors() {
        let ts = TimeSeries::new(vec![0.0; 10], 10.0).unwrap();
        let cfg = StftConfig::rectangular(2.0, 0.0, 1);
        assert!(matches!(
            compute_spectrogram(&ts, &cfg, FreqRange::hz(0.0, 5.0)),
            Err(Error::SignalTooShort { samples: 10, window: 20 })
        ));
        let bad = StftConfig::rectangular(1.0, 1.0, 1);
        assert!(bad.validate().is_err());
        let tiny = StftConfig::rectangular(0.1, 0.0, 1);
        assert!(tiny.layout(10.0, FreqUnit::Hz).is_err());
    }
}
