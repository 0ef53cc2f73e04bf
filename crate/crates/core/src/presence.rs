//! Per-frame voiced/unvoiced decisions from the relative energy ratio, with
//! run-length smoothing.

use serde::{Deserialize, Serialize};

use crate::dp::Trace;
use crate::error::{Error, Result};
use crate::spectrogram::Spectrogram;

/// Thresholds for the presence test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    /// Voiced when RER ≥ this.
    #[serde(default = "DetectionParams::default_delta_rer")]
    pub delta_rer: f64,
    /// Half-width in bins of the neighborhood excluded from the background.
    #[serde(default = "DetectionParams::default_delta_f")]
    pub delta_f: usize,
    /// Unvoiced gaps strictly shorter than this, between voiced runs, are filled.
    #[serde(default = "DetectionParams::default_gap")]
    pub delta1: usize,
    /// Voiced blips strictly shorter than this, between unvoiced runs, are dropped.
    #[serde(default = "DetectionParams::default_gap")]
    pub delta2: usize,
}

impl DetectionParams {
    fn default_delta_rer() -> f64 {
        2.41
    }

    fn default_delta_f() -> usize {
        3
    }

    fn default_gap() -> usize {
        30
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        if !(self.delta_rer > 0.0 && self.delta_rer.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "delta_rer must be positive, found {}",
                self.delta_rer
            )));
        }
        if 2 * self.delta_f >= bins {
            return Err(Error::InvalidConfig(format!(
                "delta_f = {} leaves no background in {bins} bins",
                self.delta_f
            )));
        }
        Ok(())
    }
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            delta_rer: Self::default_delta_rer(),
            delta_f: Self::default_delta_f(),
            delta1: Self::default_gap(),
            delta2: Self::default_gap(),
        }
    }
}

/// Peak over mean background of one column, the background being every bin
/// outside `[f - delta_f, f + delta_f]`.
///
/// A zero background gives 1 when the peak is also zero and `+inf` otherwise.
pub fn rer_column(column: &[f64], f: usize, delta_f: usize) -> f64 {
    let lo = f.saturating_sub(delta_f);
    let hi = (f + delta_f).min(column.len() - 1);
    let count = column.len() - (hi - lo + 1);
    let background: f64 = column[..lo].iter().chain(&column[hi + 1..]).sum();
    let peak = column[f];
    if background > 0.0 {
        count as f64 * peak / background
    } else if peak > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Relative energy ratio of every frame along `trace`.
pub fn rer(z: &Spectrogram, trace: &Trace, delta_f: usize) -> Result<Vec<f64>> {
    if trace.len() != z.frames() {
        return Err(Error::DimensionMismatch {
            what: "trace length",
            expected: z.frames(),
            found: trace.len(),
        });
    }
    if let Some(&bad) = trace.bins().iter().find(|&&m| m >= z.bins()) {
        return Err(Error::InvalidConfig(format!(
            "trace bin {bad} outside {} bins",
            z.bins()
        )));
    }
    if 2 * delta_f >= z.bins() {
        return Err(Error::InvalidConfig(format!(
            "delta_f = {delta_f} leaves no background in {} bins",
            z.bins()
        )));
    }
    Ok(trace
        .bins()
        .iter()
        .enumerate()
        .map(|(n, &f)| rer_column(z.column(n), f, delta_f))
        .collect())
}

/// Inclusive threshold test.
pub fn decide(rers: &[f64], delta_rer: f64) -> Vec<bool> {
    rers.iter().map(|&r| r >= delta_rer).collect()
}

/// Maximal runs as `(value, start, length)`.
fn runs(mask: &[bool]) -> Vec<(bool, usize, usize)> {
    let mut out: Vec<(bool, usize, usize)> = Vec::new();
    for (i, &v) in mask.iter().enumerate() {
        match out.last_mut() {
            Some((value, _, len)) if *value == v => *len += 1,
            _ => out.push((v, i, 1)),
        }
    }
    out
}

/// Flips interior runs of `target` shorter than `limit` whose both
/// neighbors exist. Runs are judged on the input, not on partial output.
fn absorb(mask: &[bool], target: bool, limit: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    let rle = runs(mask);
    for i in 1..rle.len().saturating_sub(1) {
        let (value, start, len) = rle[i];
        if value == target && len < limit {
            out[start..start + len].fill(!target);
        }
    }
    out
}

/// Fills short unvoiced gaps (`< delta1`), then drops short voiced blips
/// (`< delta2`) from the result.
pub fn merge_segments(mask: &[bool], delta1: usize, delta2: usize) -> Vec<bool> {
    let filled = absorb(mask, false, delta1);
    absorb(&filled, true, delta2)
}

/// RER, threshold and merge in one step; returns `(rer, mask)`.
pub fn detect_presence(z: &Spectrogram, trace: &Trace, params: &DetectionParams) -> Result<(Vec<f64>, Vec<bool>)> {
    let rers = rer(z, trace, params.delta_f)?;
    let mask = merge_segments(&decide(&rers, params.delta_rer), params.delta1, params.delta2);
    Ok((rers, mask))
}

/// Mean of a RER series; infinite entries make the mean infinite.
pub fn mean_rer(rers: &[f64]) -> f64 {
    if rers.is_empty() {
        return 0.0;
    }
    rers.iter().sum::<f64>() / rers.len() as f64
}
