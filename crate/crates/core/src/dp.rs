//! Regularized single-trace tracking by dynamic programming.
//!
//! For a magnitude map `Z` (M bins by N frames) and a Markov model with log
//! prior `log P_m` and log transitions `log P_{m'm}`, the solver maximizes
//!
//! ```text
//! E(f) + λ·P(f) = Σ_n Z(f(n), n) + λ·(log P_{f(0)} + Σ_{n≥1} log P_{f(n-1) f(n)})
//! ```
//!
//! through the accumulated map
//! `G(m, 0) = Z(m, 0) + λ·log P_m` and
//! `G(m, n) = max_{m'} {G(m', n-1) + λ·log P_{m'm}} + Z(m, n)`,
//! followed by backtracking from the best entry of the last column.
//! Every argmax tie goes to the lowest bin.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrogram::{Axis, Spectrogram};

/// Scaling applied to a constraint region per round.
pub const CONSTRAINT_SCALE: f64 = 2.0;
/// Rounds of constraint scaling before giving up.
pub const MAX_CONSTRAINT_ROUNDS: usize = 32;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `λ·log p` with `0·(-inf)` kept at `-inf`: forbidden moves stay forbidden
/// for every λ.
#[inline]
pub(crate) fn weighted(lambda: f64, log_p: f64) -> f64 {
    if log_p == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        lambda * log_p
    }
}

/// Index of the largest value; ties and all-`-inf` slices go to the lowest index.
#[inline]
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
enum Transitions {
    /// `P_{m'm} = 1/(2k+1)` for `|m' - m| ≤ k`, clipped at the edges and not
    /// renormalized.
    UniformBand { k: usize },
    /// Log transition matrix stored twice: row-major by source bin, and
    /// transposed for the forward pass.
    Explicit { by_from: Vec<f64>, by_to: Vec<f64> },
}

/// Markov prior and transition structure plus the regularization weight λ.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    bins: usize,
    log_prior: Vec<f64>,
    transitions: Transitions,
    lambda: f64,
}

impl TransitionModel {
    /// Uniform random walk of half-width `k` with a uniform prior.
    pub fn uniform_band(bins: usize, k: usize, lambda: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::EmptyInput);
        }
        check_lambda(lambda)?;
        Ok(TransitionModel {
            bins,
            log_prior: vec![-(bins as f64).ln(); bins],
            transitions: Transitions::UniformBand { k },
            lambda,
        })
    }

    /// Explicit model. `log_trans` is M×M row-major, entry `[from * M + to]`.
    /// Each row of `exp(log_trans)` and `exp(log_prior)` must sum to 1.
    pub fn explicit(log_prior: Vec<f64>, log_trans: Vec<f64>, lambda: f64) -> Result<Self> {
        let bins = log_prior.len();
        if bins == 0 {
            return Err(Error::EmptyInput);
        }
        check_lambda(lambda)?;
        check_distribution(&log_prior, "prior")?;
        if log_trans.len() != bins * bins {
            return Err(Error::DimensionMismatch {
                what: "transition matrix entries",
                expected: bins * bins,
                found: log_trans.len(),
            });
        }
        for row in log_trans.chunks_exact(bins) {
            check_distribution(row, "transition row")?;
        }
        let mut by_to = vec![0.0; bins * bins];
        for from in 0..bins {
            for to in 0..bins {
                by_to[to * bins + from] = log_trans[from * bins + to];
            }
        }
        Ok(TransitionModel {
            bins,
            log_prior,
            transitions: Transitions::Explicit {
                by_from: log_trans,
                by_to,
            },
            lambda,
        })
    }

    pub fn with_log_prior(mut self, log_prior: Vec<f64>) -> Result<Self> {
        if log_prior.len() != self.bins {
            return Err(Error::DimensionMismatch {
                what: "prior length",
                expected: self.bins,
                found: log_prior.len(),
            });
        }
        check_distribution(&log_prior, "prior")?;
        self.log_prior = log_prior;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        self.lambda = lambda;
        Ok(self)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    /// Band half-width for uniform-band models.
    pub fn band_half_width(&self) -> Option<usize> {
        match self.transitions {
            Transitions::UniformBand { k } => Some(k),
            Transitions::Explicit { .. } => None,
        }
    }

    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        match &self.transitions {
            Transitions::UniformBand { k } => {
                if from.abs_diff(to) <= *k {
                    -((2 * k + 1) as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Transitions::Explicit { by_from, .. } => by_from[from * self.bins + to],
        }
    }

    /// Operations in one forward column step, the unit of the cost model.
    pub fn column_cost(&self) -> usize {
        match self.transitions {
            Transitions::UniformBand { k } => self.bins * (2 * k + 1).min(self.bins),
            Transitions::Explicit { .. } => self.bins * self.bins,
        }
    }

    fn check_bins(&self, bins: usize) -> Result<()> {
        if self.bins != bins {
            return Err(Error::DimensionMismatch {
                what: "transition model bins",
                expected: bins,
                found: self.bins,
            });
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "lambda must be finite and nonnegative, found {lambda}"
        )))
    }
}

fn check_distribution(log_p: &[f64], what: &str) -> Result<()> {
    if log_p.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidConfig(format!("{what} has NaN or +inf log-probabilities")));
    }
    let total: f64 = log_p.iter().map(|v| v.exp()).sum();
    if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidConfig(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// First column of the accumulated map.
pub(crate) fn seed_column(z: &[f64], model: &TransitionModel, g: &mut [f64]) {
    for ((out, zv), lp) in g.iter_mut().zip(z).zip(&model.log_prior) {
        *out = zv + weighted(model.lambda, *lp);
    }
}

/// One forward step from `prev` into `g`, recording predecessors in `arg`.
pub(crate) fn advance_column(prev: &[f64], z: &[f64], model: &TransitionModel, g: &mut [f64], arg: &mut [u32]) {
    let m_len = model.bins;
    match &model.transitions {
        Transitions::UniformBand { k } => {
            let step = weighted(model.lambda, -((2 * k + 1) as f64).ln());
            for m in 0..m_len {
                let lo = m.saturating_sub(*k);
                let hi = (m + k).min(m_len - 1);
                let mut best = lo;
                for j in lo + 1..=hi {
                    if prev[j] > prev[best] {
                        best = j;
                    }
                }
                g[m] = prev[best] + step + z[m];
                arg[m] = best as u32;
            }
        }
        Transitions::Explicit { by_to, .. } => {
            for m in 0..m_len {
                let row = &by_to[m * m_len..(m + 1) * m_len];
                let mut best = 0;
                let mut best_val = prev[0] + weighted(model.lambda, row[0]);
                for j in 1..m_len {
                    let v = prev[j] + weighted(model.lambda, row[j]);
                    if v > best_val {
                        best = j;
                        best_val = v;
                    }
                }
                g[m] = best_val + z[m];
                arg[m] = best as u32;
            }
        }
    }
}

/// The accumulated regularized maximum-energy map with best predecessors.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulatedMap {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
    argmax_prev: Vec<u32>,
}

impl AccumulatedMap {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn value(&self, bin: usize, frame: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    pub fn column(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    /// Best predecessor of `(bin, frame)`; meaningless for frame 0.
    pub fn predecessor(&self, bin: usize, frame: usize) -> usize {
        self.argmax_prev[frame * self.bins + bin] as usize
    }
}

pub fn accumulate(z: &Spectrogram, model: &TransitionModel) -> Result<AccumulatedMap> {
    model.check_bins(z.bins())?;
    let (m_len, n_len) = (z.bins(), z.frames());
    let mut values = vec![0.0; m_len * n_len];
    let mut argmax_prev = vec![0u32; m_len * n_len];
    seed_column(z.column(0), model, &mut values[..m_len]);
    for n in 1..n_len {
        let (done, rest) = values.split_at_mut(n * m_len);
        advance_column(
            &done[(n - 1) * m_len..],
            z.column(n),
            model,
            &mut rest[..m_len],
            &mut argmax_prev[n * m_len..(n + 1) * m_len],
        );
    }
    Ok(AccumulatedMap {
        bins: m_len,
        frames: n_len,
        values,
        argmax_prev,
    })
}

pub fn backtrack(map: &AccumulatedMap) -> Trace {
    let mut bins = vec![0; map.frames];
    let Some(last) = map.frames.checked_sub(1) else {
        return Trace { bins };
    };
    bins[last] = argmax_lowest(map.column(last));
    for n in (1..map.frames).rev() {
        bins[n - 1] = map.predecessor(bins[n], n);
    }
    Trace { bins }
}

/// `E(f) + λ·P(f)` for a given trace; `-inf` when the trace uses a forbidden move.
pub fn objective(z: &Spectrogram, model: &TransitionModel, trace: &Trace) -> f64 {
    let f = trace.bins();
    let Some(&first) = f.first() else {
        return 0.0;
    };
    let energy: f64 = f.iter().enumerate().map(|(n, &m)| z.get(m, n)).sum();
    let mut log_p = weighted(model.lambda, model.log_prior[first]);
    for w in f.windows(2) {
        log_p += weighted(model.lambda, model.log_transition(w[0], w[1]));
    }
    energy + log_p
}

/// One frequency bin per frame.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace {
    bins: Vec<usize>,
}

impl Trace {
    pub fn new(bins: Vec<usize>) -> Self {
        Trace { bins }
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn into_bins(self) -> Vec<usize> {
        self.bins
    }

    /// Physical frequency of each frame's bin.
    pub fn frequencies(&self, axis: Axis) -> Vec<f64> {
        self.bins.iter().map(|&m| axis.at(m)).collect()
    }

    /// CSV with header `frame,bin,freq_physical` and a `voiced` 0/1 column
    /// when a mask is supplied.
    pub fn to_csv_string(&self, axis: Axis, voiced: Option<&[bool]>) -> String {
        let mut out = String::from("frame,bin,freq_physical");
        out.push_str(if voiced.is_some() { ",voiced\n" } else { "\n" });
        for (n, &m) in self.bins.iter().enumerate() {
            let _ = write!(out, "{n},{m},{}", axis.at(m));
            if let Some(v) = voiced {
                let _ = write!(out, ",{}", u8::from(v[n]));
            }
            out.push('\n');
        }
        out
    }
}

/// Rows of a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub trace: Trace,
    pub frequencies: Vec<f64>,
    pub voiced: Option<Vec<bool>>,
}

/// Parses the output of [`Trace::to_csv_string`].
pub fn parse_trace_csv(text: &str) -> Result<TraceTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_mask = match columns.as_slice() {
        ["frame", "bin", "freq_physical"] => false,
        ["frame", "bin", "freq_physical", "voiced"] => true,
        _ => return Err(Error::malformed(1, format!("unexpected trace header {header:?}"))),
    };
    let mut table = TraceTable {
        trace: Trace::default(),
        frequencies: Vec::new(),
        voiced: with_mask.then(Vec::new),
    };
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::malformed(line_no, format!("expected {} fields", columns.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| Error::malformed(line_no, "bad frame index"))?;
        if frame != table.trace.bins.len() {
            return Err(Error::malformed(line_no, "frames must be consecutive from 0"));
        }
        table.trace.bins.push(
            fields[1]
                .parse()
                .map_err(|_| Error::malformed(line_no, "bad bin index"))?,
        );
        table.frequencies.push(
            fields[2]
                .parse()
                .map_err(|_| Error::malformed(line_no, "bad frequency"))?,
        );
        if let Some(mask) = table.voiced.as_mut() {
            mask.push(match fields[3] {
                "1" => true,
                "0" => false,
                _ => return Err(Error::malformed(line_no, "voiced must be 0 or 1")),
            });
        }
    }
    if table.trace.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionShape {
    #[default]
    Rectangle,
    /// Ellipse inscribed in the bounding box, rasterized per frame.
    Ellipse,
}

impl RegionShape {
    fn is_rectangle(&self) -> bool {
        *self == RegionShape::Rectangle
    }
}

fn first_iteration() -> usize {
    1
}

/// A region of the time-frequency plane the trace must pass through.
///
/// `frames` and `bins` are inclusive bounding ranges. `iteration` is the
/// 1-based carving iteration the region applies to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintRegion {
    pub frames: [usize; 2],
    pub bins: [usize; 2],
    #[serde(default = "first_iteration")]
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "RegionShape::is_rectangle")]
    pub shape: RegionShape,
}

impl ConstraintRegion {
    pub fn rectangle(frames: [usize; 2], bins: [usize; 2]) -> Self {
        ConstraintRegion {
            frames,
            bins,
            iteration: 1,
            shape: RegionShape::Rectangle,
        }
    }

    pub fn ellipse(frames: [usize; 2], bins: [usize; 2]) -> Self {
        ConstraintRegion {
            shape: RegionShape::Ellipse,
            ..Self::rectangle(frames, bins)
        }
    }

    pub fn with_iteration(mut self, iteration: usize) -> Self {
        self.iteration = iteration;
        self
    }

    pub fn validate(&self, bins: usize, frames: usize) -> Result<()> {
        let [n1, n2] = self.frames;
        let [m1, m2] = self.bins;
        if n1 > n2 || m1 > m2 {
            return Err(Error::InvalidConfig(format!(
                "constraint ranges must be ordered, found frames {:?} bins {:?}",
                self.frames, self.bins
            )));
        }
        if n2 >= frames || m2 >= bins {
            return Err(Error::InvalidConfig(format!(
                "constraint frames {:?} bins {:?} outside a {bins}x{frames} spectrogram",
                self.frames, self.bins
            )));
        }
        if self.iteration == 0 {
            return Err(Error::InvalidConfig("constraint iteration is 1-based".into()));
        }
        Ok(())
    }

    /// Inclusive bin range of the region at `frame`, if the frame is covered.
    pub fn bin_range(&self, frame: usize) -> Option<(usize, usize)> {
        let [n1, n2] = self.frames;
        let [m1, m2] = self.bins;
        if frame < n1 || frame > n2 {
            return None;
        }
        match self.shape {
            RegionShape::Rectangle => Some((m1, m2)),
            RegionShape::Ellipse => {
                let centre_n = (n1 + n2) as f64 / 2.0;
                let centre_m = (m1 + m2) as f64 / 2.0;
                let radius_n = (n2 - n1) as f64 / 2.0 + 0.5;
                let radius_m = (m2 - m1) as f64 / 2.0 + 0.5;
                let t = (frame as f64 - centre_n) / radius_n;
                let half = radius_m * (1.0 - t * t).max(0.0).sqrt();
                let lo = ((centre_m - half).round() as usize).clamp(m1, m2);
                let hi = ((centre_m + half).round() as usize).clamp(m1, m2);
                Some((lo, hi))
            }
        }
    }

    pub fn contains(&self, bin: usize, frame: usize) -> bool {
        self.bin_range(frame)
            .is_some_and(|(lo, hi)| (lo..=hi).contains(&bin))
    }

    /// True when the trace visits the region in at least one frame.
    pub fn satisfied_by(&self, trace: &Trace) -> bool {
        (self.frames[0]..=self.frames[1].min(trace.len().saturating_sub(1)))
            .any(|n| n < trace.len() && self.contains(trace.bins[n], n))
    }

    fn scale(&self, z: &mut Spectrogram, factor: f64) {
        for n in self.frames[0]..=self.frames[1] {
            if let Some((lo, hi)) = self.bin_range(n) {
                for v in &mut z.column_mut(n)[lo..=hi] {
                    *v *= factor;
                }
            }
        }
    }
}

/// A solved trace plus the number of constraint scaling rounds it took.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracked {
    pub trace: Trace,
    pub rounds: usize,
}

/// Solves the single-trace problem. With constraints, entries inside each
/// region the trace misses are doubled and the problem re-solved, until every
/// region is visited or [`MAX_CONSTRAINT_ROUNDS`] is reached.
pub fn track_single(z: &Spectrogram, model: &TransitionModel, constraints: &[ConstraintRegion]) -> Result<Trace> {
    track_constrained(z, model, constraints).map(|t| t.trace)
}

pub fn track_constrained(
    z: &Spectrogram,
    model: &TransitionModel,
    constraints: &[ConstraintRegion],
) -> Result<Tracked> {
    for region in constraints {
        region.validate(z.bins(), z.frames())?;
    }
    let mut trace = backtrack(&accumulate(z, model)?);
    if constraints.iter().all(|r| r.satisfied_by(&trace)) {
        return Ok(Tracked { trace, rounds: 0 });
    }
    let mut work = z.clone();
    for round in 1..=MAX_CONSTRAINT_ROUNDS {
        for region in constraints.iter().filter(|r| !r.satisfied_by(&trace)) {
            region.scale(&mut work, CONSTRAINT_SCALE);
        }
        trace = backtrack(&accumulate(&work, model)?);
        if constraints.iter().all(|r| r.satisfied_by(&trace)) {
            return Ok(Tracked { trace, rounds: round });
        }
    }
    Err(Error::ConstraintUnsatisfiable {
        rounds: MAX_CONSTRAINT_ROUNDS,
        trace,
    })
}
