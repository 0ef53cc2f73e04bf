//! Error measures for single- and multi-trace estimates.

use serde::{Deserialize, Serialize};

use crate::carve::MultiTraceResult;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.03;
/// Relative deviation above which a matched frame counts as a gross error.
pub const GROSS_THRESHOLD: f64 = 0.20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleMetrics {
    pub rmse: f64,
    pub erate: f64,
    pub ecount: f64,
}

fn same_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, found })
    }
}

/// RMSE, mean relative error, and the fraction of frames whose relative
/// error exceeds `tau`.
pub fn single_metrics(est: &[f64], gt: &[f64], tau: f64) -> Result<SingleMetrics> {
    same_len("estimate length", gt.len(), est.len())?;
    if gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = gt.iter().find(|f| !(**f > 0.0)) {
        return Err(Error::InvalidConfig(format!("ground truth must be positive, found {bad}")));
    }
    let n = gt.len() as f64;
    let mut sq = 0.0;
    let mut rel = 0.0;
    let mut over = 0usize;
    for (e, g) in est.iter().zip(gt) {
        let d = (e - g).abs();
        sq += d * d;
        rel += d / g;
        if d / g > tau {
            over += 1;
        }
    }
    Ok(SingleMetrics {
        rmse: (sq / n).sqrt(),
        erate: rel / n,
        ecount: over as f64 / n,
    })
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len("sequence length", a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::InvalidConfig("correlation needs at least 2 samples".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Area under the ROC curve for scores where higher means "positive",
/// by the Mann–Whitney statistic with ties counted as one half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyInput);
    }
    if positives.iter().chain(negatives).any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("scores must not be NaN".into()));
    }
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for p in positives {
        let below = neg.partition_point(|n| n < p);
        let not_above = neg.partition_point(|n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (positives.len() as f64 * neg.len() as f64))
}

/// Per-trace frequencies and voicing on a shared frame grid.
#[derive(Clone, Copy, Debug)]
pub struct TraceSet<'a> {
    pub freqs: &'a [Vec<f64>],
    pub voiced: &'a [Vec<bool>],
}

impl<'a> TraceSet<'a> {
    pub fn new(freqs: &'a [Vec<f64>], voiced: &'a [Vec<bool>]) -> Self {
        TraceSet { freqs, voiced }
    }

    fn check(&self, frames: usize) -> Result<()> {
        same_len("trace count", self.freqs.len(), self.voiced.len())?;
        for (f, v) in self.freqs.iter().zip(self.voiced) {
            same_len("trace length", frames, f.len())?;
            same_len("mask length", frames, v.len())?;
        }
        Ok(())
    }

    fn count(&self, n: usize) -> usize {
        self.voiced.iter().filter(|v| v[n]).count()
    }
}

/// Voicing-count confusions and frequency errors of a multi-trace estimate.
///
/// `confusion[i][j]` is the fraction of frames with `i` true voiced traces
/// reported as `j`; the named `eij` fields are its off-diagonal entries for
/// counts up to 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiMetrics {
    #[serde(rename = "E01")]
    pub e01: f64,
    #[serde(rename = "E02")]
    pub e02: f64,
    #[serde(rename = "E10")]
    pub e10: f64,
    #[serde(rename = "E12")]
    pub e12: f64,
    #[serde(rename = "E20")]
    pub e20: f64,
    #[serde(rename = "E21")]
    pub e21: f64,
    #[serde(rename = "E_Gross")]
    pub e_gross: f64,
    #[serde(rename = "E_Total")]
    pub e_total: f64,
    #[serde(rename = "E_fine")]
    pub e_fine: f64,
    /// Per true trace mean sub-threshold deviation.
    #[serde(rename = "E_fine_per_trace")]
    pub e_fine_per_trace: Vec<f64>,
    pub confusion: Vec<Vec<f64>>,
}

impl MultiMetrics {
    /// Sum of all off-diagonal confusion entries.
    pub fn count_error(&self) -> f64 {
        self.confusion
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v))
            .sum()
    }
}

pub fn multi_metrics(est: TraceSet<'_>, gt: TraceSet<'_>) -> Result<MultiMetrics> {
    let frames = gt.freqs.first().or(est.freqs.first()).map_or(0, Vec::len);
    if frames == 0 {
        return Err(Error::EmptyInput);
    }
    est.check(frames)?;
    gt.check(frames)?;
    for (f, v) in gt.freqs.iter().zip(gt.voiced) {
        if f.iter().zip(v).any(|(f, v)| *v && !(*f > 0.0)) {
            return Err(Error::InvalidConfig("voiced ground truth must be positive".into()));
        }
    }
    let total = frames as f64;
    let mut counts = vec![vec![0usize; est.freqs.len() + 1]; gt.freqs.len() + 1];
    let mut gross = 0usize;
    let mut fine_sum = vec![0.0; gt.freqs.len()];
    let mut fine_frames = vec![0usize; gt.freqs.len()];
    let mut deviations = Vec::with_capacity(gt.freqs.len());
    for n in 0..frames {
        let truth = gt.count(n);
        let detected = est.count(n);
        counts[truth][detected] += 1;
        if truth != detected || truth == 0 {
            continue;
        }
        deviations.clear();
        for (l, (f, v)) in gt.freqs.iter().zip(gt.voiced).enumerate() {
            if !v[n] {
                continue;
            }
            let nearest = est
                .freqs
                .iter()
                .zip(est.voiced)
                .filter(|(_, ev)| ev[n])
                .map(|(ef, _)| (ef[n] - f[n]).abs() / f[n])
                .fold(f64::INFINITY, f64::min);
            deviations.push((l, nearest));
        }
        if deviations.iter().any(|(_, d)| *d > GROSS_THRESHOLD) {
            gross += 1;
        } else {
            for &(l, d) in &deviations {
                fine_sum[l] += d;
                fine_frames[l] += 1;
            }
        }
    }
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|c| *c as f64 / total).collect())
        .collect();
    let e = |i: usize, j: usize| confusion.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
    let e_fine_per_trace: Vec<f64> = fine_sum
        .iter()
        .zip(&fine_frames)
        .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
        .collect();
    let mut m = MultiMetrics {
        e01: e(0, 1),
        e02: e(0, 2),
        e10: e(1, 0),
        e12: e(1, 2),
        e20: e(2, 0),
        e21: e(2, 1),
        e_gross: gross as f64 / total,
        e_total: 0.0,
        e_fine: e_fine_per_trace.iter().sum(),
        e_fine_per_trace,
        confusion,
    };
    m.e_total = m.count_error() + m.e_gross;
    Ok(m)
}

/// Multi-trace metrics of a carving result against ground truth on the
/// same frame grid.
pub fn multi_metrics_for(result: &MultiTraceResult, gt_freqs: &[Vec<f64>], gt_voiced: &[Vec<bool>]) -> Result<MultiMetrics> {
    let freqs: Vec<Vec<f64>> = (0..result.len()).map(|l| result.frequencies(l)).collect();
    multi_metrics(TraceSet::new(&freqs, &result.masks), TraceSet::new(gt_freqs, gt_voiced))
}

/// The full metric bundle written by the evaluation command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tau: f64,
    pub frames: usize,
    pub rmse: f64,
    pub erate: f64,
    pub ecount: f64,
    /// `None` when either sequence is constant.
    pub pearson_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi: Option<MultiMetrics>,
}

impl MetricReport {
    /// Single-trace metrics, plus multi-trace measures when masks are given.
    pub fn evaluate(est: TraceSet<'_>, gt: TraceSet<'_>, tau: f64) -> Result<Self> {
        let est_first = est.freqs.first().ok_or(Error::EmptyInput)?;
        let gt_first = gt.freqs.first().ok_or(Error::EmptyInput)?;
        let single = single_metrics(est_first, gt_first, tau)?;
        let pearson_rho = match pearson(est_first, gt_first) {
            Ok(rho) => Some(rho),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        let multi = if est.freqs.len() > 1 || gt.freqs.len() > 1 || has_silence(est) || has_silence(gt) {
            Some(multi_metrics(est, gt)?)
        } else {
            None
        };
        Ok(MetricReport {
            tau,
            frames: gt_first.len(),
            rmse: single.rmse,
            erate: single.erate,
            ecount: single.ecount,
            pearson_rho,
            multi,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header() -> &'static str {
        "rmse,erate,ecount,pearson_rho,E01,E02,E10,E12,E20,E21,E_Gross,E_Total,E_fine"
    }

    /// Values in the order of [`MetricReport::csv_header`]; absent fields are empty.
    pub fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let m = self.multi.as_ref();
        let multi = [
            m.map(|m| m.e01),
            m.map(|m| m.e02),
            m.map(|m| m.e10),
            m.map(|m| m.e12),
            m.map(|m| m.e20),
            m.map(|m| m.e21),
            m.map(|m| m.e_gross),
            m.map(|m| m.e_total),
            m.map(|m| m.e_fine),
        ];
        let mut out = format!("{},{},{},{}", self.rmse, self.erate, self.ecount, opt(self.pearson_rho));
        for v in multi {
            out.push(',');
            out.push_str(&opt(v));
        }
        out
    }
}

fn has_silence(set: TraceSet<'_>) -> bool {
    set.voiced.iter().any(|v| v.iter().any(|x| !x))
}
