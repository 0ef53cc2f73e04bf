//! Harmonic combining: merge strips around several harmonics of a nominal
//! frequency into one strip on the nominal axis, weighting each harmonic
//! frame by its local SNR.

use super::stft::{compute_spectrogram, FreqRange, StftConfig};
use super::TimeSeries;
use crate::error::{Error, Result};
use crate::spectrogram::{Axis, Spectrogram};

/// Peak over mean of the remaining bins for one frame.
///
/// An all-zero frame scores 1; a frame whose only energy is its peak
/// scores `+inf`.
pub fn local_snr(column: &[f64]) -> f64 {
    let (peak_bin, peak) = column
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (m, &v)| if v > best.1 { (m, v) } else { best });
    if column.len() < 2 {
        return 1.0;
    }
    let background: f64 = column
        .iter()
        .enumerate()
        .filter(|(m, _)| *m != peak_bin)
        .map(|(_, v)| v)
        .sum::<f64>()
        / (column.len() - 1) as f64;
    if background > 0.0 {
        peak / background
    } else if peak > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Per-frame weights for each band (outer index: band). Weights in each frame
/// sum to 1. Infinite-SNR bands share the frame equally.
pub fn combining_weights(bands: &[Spectrogram]) -> Vec<Vec<f64>> {
    let frames = bands.first().map_or(0, Spectrogram::frames);
    let mut weights = vec![vec![0.0; frames]; bands.len()];
    for n in 0..frames {
        let snrs: Vec<f64> = bands.iter().map(|b| local_snr(b.column(n))).collect();
        let infinite = snrs.iter().filter(|s| s.is_infinite()).count();
        let total: f64 = snrs.iter().filter(|s| s.is_finite()).sum();
        for (b, snr) in snrs.iter().enumerate() {
            weights[b][n] = if infinite > 0 {
                if snr.is_infinite() {
                    1.0 / infinite as f64
                } else {
                    0.0
                }
            } else {
                snr / total
            };
        }
    }
    weights
}

/// Convex per-frame combination of harmonic bands already mapped onto a
/// common nominal-frequency axis. `orders[b]` is the harmonic order of
/// `bands[b]`.
pub fn harmonic_combine(bands: &[Spectrogram], orders: &[u32]) -> Result<Spectrogram> {
    let first = bands.first().ok_or(Error::EmptyInput)?;
    if orders.len() != bands.len() {
        return Err(Error::DimensionMismatch {
            what: "harmonic orders",
            expected: bands.len(),
            found: orders.len(),
        });
    }
    if orders.contains(&0) {
        return Err(Error::InvalidConfig("harmonic orders must be positive".into()));
    }
    for band in &bands[1..] {
        if band.bins() != first.bins() {
            return Err(Error::DimensionMismatch {
                what: "harmonic band bins",
                expected: first.bins(),
                found: band.bins(),
            });
        }
        if band.frames() != first.frames() {
            return Err(Error::DimensionMismatch {
                what: "harmonic band frames",
                expected: first.frames(),
                found: band.frames(),
            });
        }
    }
    let weights = combining_weights(bands);
    let mut values = vec![0.0; first.bins() * first.frames()];
    for (band, w) in bands.iter().zip(&weights) {
        for (n, column) in band.columns().enumerate() {
            let out = &mut values[n * first.bins()..(n + 1) * first.bins()];
            for (o, v) in out.iter_mut().zip(column) {
                *o += w[n] * v;
            }
        }
    }
    Spectrogram::new(first.bins(), first.frames(), values, first.freq_axis(), first.time_axis())
}

/// Strips around harmonics `h * nominal` of a signal, each resampled onto
/// the common axis `[nominal - half_width, nominal + half_width]` with bins
/// `bin_spacing` apart (all in Hz). The band of order `h` is computed with
/// spacing `h * bin_spacing` and its frequency axis divided by `h`.
pub fn harmonic_strips(
    ts: &TimeSeries,
    cfg: &StftConfig,
    nominal: f64,
    half_width: f64,
    bin_spacing: f64,
    orders: &[u32],
) -> Result<Vec<Spectrogram>> {
    if !(half_width > 0.0 && bin_spacing > 0.0 && nominal > half_width) {
        return Err(Error::InvalidConfig("invalid harmonic strip geometry".into()));
    }
    let lo = nominal - half_width;
    let bins = (2.0 * half_width / bin_spacing).round() as usize + 1;
    let common = Axis::new(lo, bin_spacing);
    orders
        .iter()
        .map(|&h| {
            if h == 0 {
                return Err(Error::InvalidConfig("harmonic orders must be positive".into()));
            }
            let h = h as f64;
            let band_cfg = cfg.with_bin_spacing(h * bin_spacing);
            // One guard bin on each side so interpolation never extrapolates.
            let range = FreqRange::hz(h * lo - h * bin_spacing, h * (lo + half_width * 2.0) + h * bin_spacing);
            let band = compute_spectrogram(ts, &band_cfg, range)?;
            let axis = band.freq_axis();
            let mut columns = Vec::with_capacity(band.frames());
            for column in band.columns() {
                let resampled = (0..bins)
                    .map(|j| {
                        let pos = (h * common.at(j) - axis.origin) / axis.step;
                        let i = pos.floor().clamp(0.0, (column.len() - 1) as f64) as usize;
                        let frac = (pos - i as f64).clamp(0.0, 1.0);
                        let next = (i + 1).min(column.len() - 1);
                        column[i] * (1.0 - frac) + column[next] * frac
                    })
                    .collect();
                columns.push(resampled);
            }
            Spectrogram::from_columns(&columns, common, band.time_axis())
        })
        .collect()
}
