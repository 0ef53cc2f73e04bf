//! Offline multi-trace carving: track the strongest trace, erase it with an
//! adaptive flipped-Gaussian notch, and repeat on the residual.

use serde::{Deserialize, Serialize};

use crate::dp::{track_constrained, ConstraintRegion, Trace, TransitionModel};
use crate::error::{Error, Result};
use crate::presence::{detect_presence, mean_rer, DetectionParams};
use crate::spectrogram::{Axis, Spectrogram};

/// Smallest notch variance, in bins².
pub const SIGMA2_FLOOR: f64 = 0.25;

/// Interval `[m1, m2]` around a trace bin and the notch variance fitted on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectivePeak {
    pub m1: usize,
    pub m2: usize,
    pub sigma2: f64,
}

impl EffectivePeak {
    pub fn width(&self) -> usize {
        self.m2 - self.m1
    }
}

/// Scans left from `f` for the nearest strict local minimum of the column
/// or of its backward difference `d(m) = c(m) - c(m-1)`; bin 0 otherwise.
fn left_bound(c: &[f64], f: usize) -> usize {
    let len = c.len();
    for m in (1..=f).rev() {
        if m + 1 >= len {
            continue;
        }
        if c[m] < c[m - 1] && c[m] < c[m + 1] {
            return m;
        }
        if m >= 2 {
            let d = c[m] - c[m - 1];
            if d < c[m - 1] - c[m - 2] && d < c[m + 1] - c[m] {
                return m;
            }
        }
    }
    0
}

/// Bounds of the effective peak around `f`. The right side mirrors the left:
/// a strict local minimum of the column or a strict local maximum of the
/// forward difference, with the last bin as fallback.
pub fn peak_bounds(column: &[f64], f: usize) -> (usize, usize) {
    let last = column.len() - 1;
    let m1 = left_bound(column, f);
    let reversed: Vec<f64> = column.iter().rev().copied().collect();
    let m2 = last - left_bound(&reversed, last - f);
    (m1, m2)
}

/// Bounds plus the magnitude-weighted variance of `m - f` over them.
pub fn effective_peak(column: &[f64], f: usize) -> EffectivePeak {
    let (m1, m2) = peak_bounds(column, f);
    let (mut mass, mut moment) = (0.0, 0.0);
    for (m, v) in column.iter().enumerate().take(m2 + 1).skip(m1) {
        let d = m as f64 - f as f64;
        mass += v;
        moment += v * d * d;
    }
    let sigma2 = if mass > 0.0 { moment / mass } else { 0.0 };
    EffectivePeak {
        m1,
        m2,
        sigma2: sigma2.max(SIGMA2_FLOOR),
    }
}

/// Writes `(1 - exp(-(m-f)²/(2σ²))) · column[m]` into `out` and returns the peak used.
pub fn compensate_column(column: &[f64], f: usize, out: &mut [f64]) -> EffectivePeak {
    let peak = effective_peak(column, f);
    for (m, (o, v)) in out.iter_mut().zip(column).enumerate() {
        let d = m as f64 - f as f64;
        *o = (1.0 - (-d * d / (2.0 * peak.sigma2)).exp()) * v;
    }
    peak
}

/// Erases `trace` from `z` frame by frame.
pub fn compensate(z: &Spectrogram, trace: &Trace) -> Result<Spectrogram> {
    check_trace(z, trace)?;
    Ok(z.map_columns(|n, input, out| {
        compensate_column(input, trace.bins()[n], out);
    }))
}

fn check_trace(z: &Spectrogram, trace: &Trace) -> Result<()> {
    if trace.len() != z.frames() {
        return Err(Error::DimensionMismatch {
            what: "trace length",
            expected: z.frames(),
            found: trace.len(),
        });
    }
    if let Some(&bad) = trace.bins().iter().find(|&&m| m >= z.bins()) {
        return Err(Error::InvalidConfig(format!("trace bin {bad} outside {} bins", z.bins())));
    }
    Ok(())
}

/// One carving iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub trace: Trace,
    pub rer: Vec<f64>,
    pub mask: Vec<bool>,
    pub mean_rer: f64,
    /// Constraint scaling rounds spent on this layer.
    pub rounds: usize,
}

/// Lazily yields carving iterations. Compensation of the previous trace runs
/// only when the next iteration is requested, so taking `L` items performs
/// exactly `L - 1` compensations.
pub struct Carver<'a> {
    residual: Spectrogram,
    models: &'a [TransitionModel],
    det: DetectionParams,
    constraints: &'a [ConstraintRegion],
    iteration: usize,
    previous: Option<Trace>,
    compensations: usize,
}

impl<'a> Carver<'a> {
    /// `models` holds one shared model or one per iteration (the last is
    /// reused past the end).
    pub fn new(
        z: &Spectrogram,
        models: &'a [TransitionModel],
        det: DetectionParams,
        constraints: &'a [ConstraintRegion],
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidConfig("at least one transition model is required".into()));
        }
        for model in models {
            if model.bins() != z.bins() {
                return Err(Error::DimensionMismatch {
                    what: "transition model bins",
                    expected: z.bins(),
                    found: model.bins(),
                });
            }
        }
        det.validate(z.bins())?;
        for region in constraints {
            region.validate(z.bins(), z.frames())?;
        }
        Ok(Carver {
            residual: z.clone(),
            models,
            det,
            constraints,
            iteration: 0,
            previous: None,
            compensations: 0,
        })
    }

    pub fn compensations(&self) -> usize {
        self.compensations
    }

    /// The map the next iteration will track on (before pending compensation).
    pub fn residual(&self) -> &Spectrogram {
        &self.residual
    }

    fn step(&mut self) -> Result<Layer> {
        if let Some(previous) = self.previous.take() {
            self.residual = compensate(&self.residual, &previous)?;
            self.compensations += 1;
        }
        let model = &self.models[self.iteration.min(self.models.len() - 1)];
        self.iteration += 1;
        let regions: Vec<ConstraintRegion> = self
            .constraints
            .iter()
            .filter(|r| r.iteration == self.iteration)
            .cloned()
            .collect();
        let tracked = track_constrained(&self.residual, model, &regions)?;
        let (rer, mask) = detect_presence(&self.residual, &tracked.trace, &self.det)?;
        self.previous = Some(tracked.trace.clone());
        Ok(Layer {
            mean_rer: mean_rer(&rer),
            trace: tracked.trace,
            rer,
            mask,
            rounds: tracked.rounds,
        })
    }
}

impl Iterator for Carver<'_> {
    type Item = Result<Layer>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.step())
    }
}

/// Traces, masks and RER statistics of `L` carving iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "wire::Result", try_from = "wire::Result")]
pub struct MultiTraceResult {
    pub traces: Vec<Trace>,
    pub masks: Vec<Vec<bool>>,
    pub rer_series: Vec<Vec<f64>>,
    pub mean_rer: Vec<f64>,
    pub freq_axis: Axis,
    pub time_axis: Axis,
}

impl MultiTraceResult {
    pub fn from_layers(layers: Vec<Layer>, freq_axis: Axis, time_axis: Axis) -> Self {
        let mut out = MultiTraceResult {
            traces: Vec::with_capacity(layers.len()),
            masks: Vec::with_capacity(layers.len()),
            rer_series: Vec::with_capacity(layers.len()),
            mean_rer: Vec::with_capacity(layers.len()),
            freq_axis,
            time_axis,
        };
        for layer in layers {
            out.traces.push(layer.trace);
            out.masks.push(layer.mask);
            out.rer_series.push(layer.rer);
            out.mean_rer.push(layer.mean_rer);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.traces.first().map_or(0, Trace::len)
    }

    /// Physical frequencies of trace `l`.
    pub fn frequencies(&self, l: usize) -> Vec<f64> {
        self.traces[l].frequencies(self.freq_axis)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result serialization is infallible")
    }
}

mod wire {
    use serde::{Deserialize, Serialize};

    use crate::dp::Trace;
    use crate::spectrogram::Axis;

    #[derive(Serialize, Deserialize)]
    pub struct FreqAxis {
        pub f0: f64,
        pub df: f64,
    }

    #[derive(Serialize, Deserialize)]
    pub struct TimeAxis {
        pub t0: f64,
        pub dt: f64,
    }

    /// JSON form: masks as 0/1, infinite RER as `null`.
    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Result {
        pub traces: Vec<Trace>,
        pub masks: Vec<Vec<u8>>,
        pub rer: Vec<Vec<Option<f64>>>,
        pub mean_rer: Vec<Option<f64>>,
        pub freq_axis: FreqAxis,
        pub time_axis: TimeAxis,
    }

    fn finite(v: f64) -> Option<f64> {
        v.is_finite().then_some(v)
    }

    fn restore(v: Option<f64>) -> f64 {
        v.unwrap_or(f64::INFINITY)
    }

    impl From<super::MultiTraceResult> for Result {
        fn from(r: super::MultiTraceResult) -> Self {
            Result {
                traces: r.traces,
                masks: r.masks.iter().map(|m| m.iter().map(|&v| u8::from(v)).collect()).collect(),
                rer: r.rer_series.iter().map(|s| s.iter().map(|&v| finite(v)).collect()).collect(),
                mean_rer: r.mean_rer.iter().map(|&v| finite(v)).collect(),
                freq_axis: FreqAxis {
                    f0: r.freq_axis.origin,
                    df: r.freq_axis.step,
                },
                time_axis: TimeAxis {
                    t0: r.time_axis.origin,
                    dt: r.time_axis.step,
                },
            }
        }
    }

    impl TryFrom<Result> for super::MultiTraceResult {
        type Error = String;

        fn try_from(r: Result) -> std::result::Result<Self, String> {
            let l = r.traces.len();
            if r.masks.len() != l || r.rer.len() != l || r.mean_rer.len() != l {
                return Err("traces, masks, rer and mean_rer must have equal counts".into());
            }
            let masks = r
                .masks
                .into_iter()
                .map(|m| {
                    m.into_iter()
                        .map(|v| match v {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(format!("mask entries must be 0 or 1, found {other}")),
                        })
                        .collect()
                })
                .collect::<std::result::Result<_, _>>()?;
            Ok(super::MultiTraceResult {
                traces: r.traces,
                masks,
                rer_series: r.rer.into_iter().map(|s| s.into_iter().map(restore).collect()).collect(),
                mean_rer: r.mean_rer.into_iter().map(restore).collect(),
                freq_axis: Axis::new(r.freq_axis.f0, r.freq_axis.df),
                time_axis: Axis::new(r.time_axis.t0, r.time_axis.dt),
            })
        }
    }
}

/// Runs `l` carving iterations.
pub fn amtc_offline(
    z: &Spectrogram,
    l: usize,
    models: &[TransitionModel],
    det: &DetectionParams,
) -> Result<MultiTraceResult> {
    amtc_offline_constrained(z, l, models, det, &[])
}

/// As [`amtc_offline`], with constraint regions applied to the iteration
/// each region names.
pub fn amtc_offline_constrained(
    z: &Spectrogram,
    l: usize,
    models: &[TransitionModel],
    det: &DetectionParams,
    constraints: &[ConstraintRegion],
) -> Result<MultiTraceResult> {
    if l == 0 {
        return Err(Error::InvalidConfig("trace count must be at least 1".into()));
    }
    if models.len() != 1 && models.len() != l {
        return Err(Error::DimensionMismatch {
            what: "transition models",
            expected: l,
            found: models.len(),
        });
    }
    if let Some(r) = constraints.iter().find(|r| r.iteration > l) {
        return Err(Error::InvalidConfig(format!(
            "constraint targets iteration {} but only {l} run",
            r.iteration
        )));
    }
    let layers = Carver::new(z, models, *det, constraints)?
        .take(l)
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiTraceResult::from_layers(layers, z.freq_axis(), z.time_axis()))
}

/// Default threshold on the mean RER of an iteration for counting traces.
pub const DEFAULT_COUNT_THRESHOLD: f64 = 2.41;

/// Number of traces present: the 0-based index of the first iteration whose
/// mean RER falls below `threshold`, or `l_max` when none does.
pub fn estimate_trace_count(
    z: &Spectrogram,
    l_max: usize,
    threshold: f64,
    model: &TransitionModel,
    det: &DetectionParams,
) -> Result<usize> {
    if l_max == 0 {
        return Err(Error::InvalidConfig("l_max must be at least 1".into()));
    }
    let models = std::slice::from_ref(model);
    for (l, layer) in Carver::new(z, models, *det, &[])?.take(l_max).enumerate() {
        if layer?.mean_rer < threshold {
            return Ok(l);
        }
    }
    Ok(l_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triangular_peak_reaches_its_feet() {
        let column = [0.5, 0.0, 1.0, 4.0, 9.0, 4.0, 1.0, 0.0, 0.5];
        assert_eq!(peak_bounds(&column, 4), (1, 7));
        // A zero plateau is not a minimum, so the bound runs to the edge.
        let column = [0.0, 0.0, 1.0, 4.0, 9.0, 4.0, 1.0, 0.0, 0.0];
        assert_eq!(peak_bounds(&column, 4), (0, 8));
        let column = [1.0, 4.0, 9.0, 4.0, 1.0];
        assert_eq!(peak_bounds(&column, 2), (0, 4));
    }

    #[test]
    fn edge_peaks_use_the_edges() {
        let column = [9.0, 4.0, 1.0, 2.0, 3.0];
        assert_eq!(peak_bounds(&column, 0), (0, 2));
        let column = [3.0, 2.0, 1.0, 4.0, 9.0];
        assert_eq!(peak_bounds(&column, 4), (2, 4));
    }

    #[test]
    fn worked_example_variance() {
        let column = [1.0, 4.0, 9.0, 4.0, 1.0];
        let peak = effective_peak(&column, 2);
        assert_eq!((peak.m1, peak.m2), (0, 4));
        assert!((peak.sigma2 - 16.0 / 19.0).abs() < 1e-15);
        let mut out = [0.0; 5];
        compensate_column(&column, 2, &mut out);
        let s2 = 16.0 / 19.0;
        for (m, (o, v)) in out.iter().zip(&column).enumerate() {
            let d = m as f64 - 2.0;
            let expected = (1.0 - (-d * d / (2.0 * s2)).exp()) * v;
            assert!((o - expected).abs() < 1e-15);
        }
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn zero_column_is_unchanged_with_floor_variance() {
        let column = [0.0; 6];
        let mut out = [1.0; 6];
        let peak = compensate_column(&column, 3, &mut out);
        assert_eq!(peak.sigma2, SIGMA2_FLOOR);
        assert_eq!(out, column);
    }

    /// Independent scan for the right bound of two overlapping bumps.
    #[test]
    fn right_bound_stops_at_the_shoulder() {
        let g = |m: f64, mu: f64, s: f64| (-(m - mu).powi(2) / (2.0 * s * s)).exp();
        let column: Vec<f64> = (0..40)
            .map(|m| g(m as f64, 12.0, 2.5) + 0.6 * g(m as f64, 18.0, 2.5))
            .collect();
        // No column minimum between the bumps.
        assert!((13..18).all(|m| !(column[m] < column[m - 1] && column[m] < column[m + 1])));
        let fwd: Vec<f64> = (0..39).map(|m| column[m + 1] - column[m]).collect();
        let expected = (13..18)
            .find(|&m| fwd[m] > fwd[m - 1] && fwd[m] > fwd[m + 1])
            .unwrap();
        let (_, m2) = peak_bounds(&column, 12);
        assert_eq!(m2, expected);
        assert!(m2 < 18);
    }

    /// Single-bin ridges over a deterministic jittered background, so that
    /// strict local minima exist away from the ridges.
    fn ridges(strengths: &[(usize, f64)], bins: usize, frames: usize) -> Spectrogram {
        let columns: Vec<Vec<f64>> = (0..frames)
            .map(|n| {
                let mut c: Vec<f64> = (0..bins).map(|m| 0.05 + 0.01 * ((m * 37 + n * 11) % 7) as f64).collect();
                for &(m, s) in strengths {
                    c[m] = s;
                }
                c
            })
            .collect();
        Spectrogram::from_columns_unit(&columns).unwrap()
    }

    #[test]
    fn two_ridges_come_out_strongest_first() {
        let z = ridges(&[(10, 2.0), (30, 1.0)], 40, 20);
        let model = TransitionModel::uniform_band(40, 3, 1.0).unwrap();
        let det = DetectionParams::default();
        let result = amtc_offline(&z, 2, &[model], &det).unwrap();
        assert!(result.traces[0].bins().iter().all(|&m| m == 10));
        assert!(result.traces[1].bins().iter().all(|&m| m == 30));
        assert!(result.mean_rer[0] >= result.mean_rer[1]);
    }

    #[test]
    fn single_iteration_equals_track_plus_presence() {
        let z = ridges(&[(10, 2.0)], 30, 12);
        let model = TransitionModel::uniform_band(30, 2, 1.0).unwrap();
        let det = DetectionParams::default();
        let result = amtc_offline(&z, 1, std::slice::from_ref(&model), &det).unwrap();
        let trace = crate::dp::track_single(&z, &model, &[]).unwrap();
        let (rer, mask) = detect_presence(&z, &trace, &det).unwrap();
        assert_eq!(result.traces, vec![trace]);
        assert_eq!(result.masks, vec![mask]);
        assert_eq!(result.rer_series, vec![rer]);
    }

    #[test]
    fn carver_counts_compensations() {
        let z = ridges(&[(10, 2.0), (20, 1.5), (30, 1.0)], 40, 8);
        let models = [TransitionModel::uniform_band(40, 1, 1.0).unwrap()];
        let mut carver = Carver::new(&z, &models, DetectionParams::default(), &[]).unwrap();
        for l in 1..=4 {
            carver.next().unwrap().unwrap();
            assert_eq!(carver.compensations(), l - 1);
        }
    }

    #[test]
    fn trace_count_on_three_ridges() {
        let z = ridges(&[(10, 3.0), (25, 2.5), (40, 2.0)], 60, 30);
        let model = TransitionModel::uniform_band(60, 1, 1.0).unwrap();
        let count = estimate_trace_count(&z, 4, DEFAULT_COUNT_THRESHOLD, &model, &DetectionParams::default()).unwrap();
        assert_eq!(count, 3);
    }

    #[test]
    fn model_count_must_match() {
        let z = ridges(&[(10, 2.0)], 30, 4);
        let m = TransitionModel::uniform_band(30, 2, 1.0).unwrap();
        let det = DetectionParams::default();
        assert!(amtc_offline(&z, 3, &[m.clone(), m.clone()], &det).is_err());
        assert!(amtc_offline(&z, 0, &[m.clone()], &det).is_err());
        assert!(amtc_offline(&z, 2, &[m.clone(), m], &det).is_ok());
    }

    #[test]
    fn result_json_shape() {
        let mut columns = vec![vec![0.0; 30]; 3];
        for c in &mut columns {
            c[10] = 2.0;
        }
        let z = Spectrogram::from_columns_unit(&columns).unwrap();
        let m = TransitionModel::uniform_band(30, 2, 1.0).unwrap();
        let result = amtc_offline(&z, 1, &[m], &DetectionParams::default()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&result.to_json()).unwrap();
        assert_eq!(value["traces"], serde_json::json!([[10, 10, 10]]));
        assert_eq!(value["masks"], serde_json::json!([[1, 1, 1]]));
        assert_eq!(value["freq_axis"], serde_json::json!({"f0": 0.0, "df": 1.0}));
        // Zero background gives an infinite RER, written as null.
        assert!(value["rer"][0][0].is_null());
        let back: MultiTraceResult = serde_json::from_value(value).unwrap();
        assert_eq!(back, result);
    }

    fn random_map() -> impl Strategy<Value = (Spectrogram, Trace)> {
        (2usize..16, 1usize..6).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], m * n),
                proptest::collection::vec(0..m, n),
            )
                .prop_map(move |(values, bins)| {
                    let columns: Vec<Vec<f64>> = values.chunks(m).map(<[f64]>::to_vec).collect();
                    (Spectrogram::from_columns_unit(&columns).unwrap(), Trace::new(bins))
                })
        })
    }

    proptest! {
        #[test]
        fn compensation_is_a_contraction((z, trace) in random_map()) {
            let out = compensate(&z, &trace).unwrap();
            for n in 0..z.frames() {
                let f = trace.bins()[n];
                let peak = effective_peak(z.column(n), f);
                prop_assert!(peak.sigma2 >= SIGMA2_FLOOR);
                prop_assert!(peak.m1 <= f && f <= peak.m2);
                prop_assert_eq!(out.get(f, n), 0.0);
                for m in 0..z.bins() {
                    let (a, b) = (out.get(m, n), z.get(m, n));
                    prop_assert!(0.0 <= a && a <= b);
                    // Strictness holds wherever the notch factor is representable below 1.
                    let d = m.abs_diff(f) as f64;
                    if b > 0.0 && m != f && d * d / (2.0 * peak.sigma2) < 30.0 {
                        prop_assert!(a < b);
                    }
                }
            }
        }
    }
}
