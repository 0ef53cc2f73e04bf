//! Near-real-time multi-trace tracking over a sliding window.
//!
//! The window holds frames `[τ1, τ2]` with `τ2` the newest frame and
//! `τ1 = max(0, τ2 - k1 - k2)`. Frame `τ2 - k2` is emitted once `τ2`
//! arrives. Per layer the tracker keeps the carved map, the accumulated map
//! and the previous backtrack over the window, plus one boundary column: the
//! accumulated column just left of the window, frozen when it was evicted.
//!
//! Each push advances layer 1 by one column, then for every layer recomputes
//! only the stale suffix of the window. A backtrack stops as soon as it meets
//! the previous backtrack on a column whose accumulated values did not change;
//! everything left of that point is reused, and the next layer only recomputes
//! its carving and accumulation to the right of it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::carve::compensate_column;
use crate::dp::{advance_column, argmax_lowest, seed_column, TransitionModel};
use crate::error::{Error, Result};
use crate::presence::{decide, merge_segments, rer_column, DetectionParams};

/// Look-back, look-ahead, per-layer models and detection thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineParams {
    pub k1: usize,
    pub k2: usize,
    /// One shared model or one per layer; the count of layers is
    /// `traces`.
    pub models: Vec<TransitionModel>,
    pub traces: usize,
    pub det: DetectionParams,
}

impl OnlineParams {
    pub const DEFAULT_K1: usize = 50;
    pub const DEFAULT_K2: usize = 100;

    pub fn new(k1: usize, k2: usize, traces: usize, models: Vec<TransitionModel>, det: DetectionParams) -> Self {
        OnlineParams {
            k1,
            k2,
            models,
            traces,
            det,
        }
    }

    pub fn capacity(&self) -> usize {
        self.k1 + self.k2 + 1
    }
}

/// Estimates for one frame, one entry per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineEstimate {
    pub frame: usize,
    pub bins: Vec<usize>,
    pub voiced: Vec<bool>,
    #[serde(with = "finite_or_null")]
    pub rer: Vec<f64>,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let wire: Vec<Option<f64>> = values.iter().map(|v| v.is_finite().then_some(*v)).collect();
        wire.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let wire = Vec::<Option<f64>>::deserialize(d)?;
        Ok(wire.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Whether the tracker can emit yet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineStatus {
    /// Fewer than `k2 + 1` frames have arrived.
    WarmingUp { received: usize, needed: usize },
    Ready,
}

/// Work counters, in units that do not depend on the machine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineOps {
    /// Accumulated-map columns computed.
    pub columns: u64,
    /// Inner-loop operations spent on those columns (`M·(2k+1)` or `M²` each).
    pub column_work: u64,
    /// Carved columns computed for layers past the first.
    pub compensations: u64,
    /// Backtracking steps taken, including the one that hit an agreement.
    pub backtrack_steps: u64,
    /// Backtracks that stopped early on agreement.
    pub early_stops: u64,
}

#[derive(Default)]
struct Layer {
    z: VecDeque<Vec<f64>>,
    g: VecDeque<Vec<f64>>,
    arg: VecDeque<Vec<u32>>,
    trace: VecDeque<usize>,
    rer: VecDeque<f64>,
    mask: Vec<bool>,
    anchor: Option<Vec<f64>>,
}

impl Layer {
    fn evict(&mut self) {
        self.z.pop_front();
        self.arg.pop_front();
        self.trace.pop_front();
        self.rer.pop_front();
        if let Some(g) = self.g.pop_front() {
            self.anchor = Some(g);
        }
    }
}

/// Streaming tracker. Memory stays at `k1 + k2 + 1` columns per layer.
pub struct OnlineTracker {
    params: OnlineParams,
    bins: usize,
    layers: Vec<Layer>,
    received: usize,
    next_emit: usize,
    ops: OnlineOps,
}

impl OnlineTracker {
    pub fn new(params: OnlineParams) -> Result<Self> {
        let first = params
            .models
            .first()
            .ok_or_else(|| Error::InvalidConfig("at least one transition model is required".into()))?;
        let bins = first.bins();
        if params.traces == 0 {
            return Err(Error::InvalidConfig("trace count must be at least 1".into()));
        }
        if params.models.len() != 1 && params.models.len() != params.traces {
            return Err(Error::DimensionMismatch {
                what: "transition models",
                expected: params.traces,
                found: params.models.len(),
            });
        }
        if let Some(m) = params.models.iter().find(|m| m.bins() != bins) {
            return Err(Error::DimensionMismatch {
                what: "transition model bins",
                expected: bins,
                found: m.bins(),
            });
        }
        params.det.validate(bins)?;
        let layers = (0..params.traces).map(|_| Layer::default()).collect();
        Ok(OnlineTracker {
            params,
            bins,
            layers,
            received: 0,
            next_emit: 0,
            ops: OnlineOps::default(),
        })
    }

    pub fn params(&self) -> &OnlineParams {
        &self.params
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn received(&self) -> usize {
        self.received
    }

    pub fn ops(&self) -> OnlineOps {
        self.ops
    }

    /// Columns currently buffered per layer.
    pub fn buffered(&self) -> usize {
        self.layers[0].z.len()
    }

    pub fn status(&self) -> OnlineStatus {
        if self.received > self.params.k2 {
            OnlineStatus::Ready
        } else {
            OnlineStatus::WarmingUp {
                received: self.received,
                needed: self.params.k2 + 1,
            }
        }
    }

    fn model(&self, layer: usize) -> &TransitionModel {
        &self.params.models[layer.min(self.params.models.len() - 1)]
    }

    /// Feeds one frame; returns the estimate for frame `received - 1 - k2`
    /// once it exists.
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Option<OnlineEstimate>> {
        if frame.len() != self.bins {
            return Err(Error::DimensionMismatch {
                what: "frame length",
                expected: self.bins,
                found: frame.len(),
            });
        }
        if let Some(bad) = frame.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "frame values must be finite and nonnegative, found {bad}"
            )));
        }
        self.advance_first_layer(frame);
        self.received += 1;
        if self.layers[0].z.len() > self.params.capacity() {
            for layer in &mut self.layers {
                layer.evict();
            }
        }
        self.refresh_layers();
        let tau2 = self.received - 1;
        if tau2 >= self.params.k2 {
            let n = tau2 - self.params.k2;
            self.next_emit = n + 1;
            Ok(Some(self.estimate_at(n)))
        } else {
            Ok(None)
        }
    }

    /// Estimates for every frame not yet emitted, from the final state.
    pub fn finalize(&mut self) -> Vec<OnlineEstimate> {
        let out = (self.next_emit..self.received).map(|n| self.estimate_at(n)).collect();
        self.next_emit = self.received;
        out
    }

    fn tau1(&self) -> usize {
        self.received - self.layers[0].z.len()
    }

    fn estimate_at(&self, frame: usize) -> OnlineEstimate {
        let i = frame - self.tau1();
        OnlineEstimate {
            frame,
            bins: self.layers.iter().map(|l| l.trace[i]).collect(),
            voiced: self.layers.iter().map(|l| l.mask[i]).collect(),
            rer: self.layers.iter().map(|l| l.rer[i]).collect(),
        }
    }

    fn advance_first_layer(&mut self, frame: &[f64]) {
        let model = &self.params.models[0];
        let mut g = vec![0.0; self.bins];
        let mut arg = vec![0u32; self.bins];
        let layer = &mut self.layers[0];
        match layer.g.back().or(layer.anchor.as_ref()) {
            Some(prev) => advance_column(prev, frame, model, &mut g, &mut arg),
            None => seed_column(frame, model, &mut g),
        }
        self.ops.columns += 1;
        self.ops.column_work += model.column_cost() as u64;
        layer.z.push_back(frame.to_vec());
        layer.g.push_back(g);
        layer.arg.push_back(arg);
    }

    /// Recomputes the stale suffix of every layer. Indices are window-local.
    fn refresh_layers(&mut self) {
        let width = self.layers[0].z.len();
        let mut stale = width - 1;
        for l in 0..self.layers.len() {
            if l > 0 {
                self.recarve(l, stale);
                self.reaccumulate(l, stale);
            }
            let agree = self.backtrack(l, stale);
            let next = agree.map_or(0, |a| a + 1);
            self.refresh_presence(l, next);
            stale = next;
        }
    }

    fn recarve(&mut self, l: usize, stale: usize) {
        let (done, rest) = self.layers.split_at_mut(l);
        let (above, layer) = (&done[l - 1], &mut rest[0]);
        for i in stale..above.z.len() {
            let mut out = vec![0.0; self.bins];
            compensate_column(&above.z[i], above.trace[i], &mut out);
            if i < layer.z.len() {
                layer.z[i] = out;
            } else {
                layer.z.push_back(out);
            }
            self.ops.compensations += 1;
        }
    }

    fn reaccumulate(&mut self, l: usize, stale: usize) {
        let model = self.model(l).clone();
        let bins = self.bins;
        let layer = &mut self.layers[l];
        let width = layer.z.len();
        for i in stale..width {
            let mut g = vec![0.0; bins];
            let mut arg = vec![0u32; bins];
            let prev = if i == 0 { layer.anchor.as_ref() } else { Some(&layer.g[i - 1]) };
            match prev {
                Some(prev) => advance_column(prev, &layer.z[i], &model, &mut g, &mut arg),
                None => seed_column(&layer.z[i], &model, &mut g),
            }
            if i < layer.g.len() {
                layer.g[i] = g;
                layer.arg[i] = arg;
            } else {
                layer.g.push_back(g);
                layer.arg.push_back(arg);
            }
            self.ops.columns += 1;
            self.ops.column_work += model.column_cost() as u64;
        }
    }

    /// Backtracks layer `l` from the newest column. Returns the window index
    /// where it met the previous backtrack, if it did.
    fn backtrack(&mut self, l: usize, stale: usize) -> Option<usize> {
        let layer = &mut self.layers[l];
        let width = layer.g.len();
        let previous = layer.trace.len();
        let mut f = argmax_lowest(&layer.g[width - 1]);
        for i in (0..width).rev() {
            if i + 1 < width {
                f = layer.arg[i + 1][f] as usize;
            }
            self.ops.backtrack_steps += 1;
            if i < stale && i < previous && layer.trace[i] == f {
                self.ops.early_stops += 1;
                return Some(i);
            }
            if i < previous {
                layer.trace[i] = f;
            } else {
                layer.trace.push_back(f);
            }
        }
        None
    }

    fn refresh_presence(&mut self, l: usize, from: usize) {
        let det = self.params.det;
        let layer = &mut self.layers[l];
        let width = layer.z.len();
        layer.rer.truncate(from);
        for i in from..width {
            layer.rer.push_back(rer_column(&layer.z[i], layer.trace[i], det.delta_f));
        }
        let rers: Vec<f64> = layer.rer.iter().copied().collect();
        layer.mask = merge_segments(&decide(&rers, det.delta_rer), det.delta1, det.delta2);
    }
}

/// Runs a whole spectrogram through the tracker and returns every estimate in
/// frame order.
pub fn track_online(z: &crate::spectrogram::Spectrogram, params: OnlineParams) -> Result<Vec<OnlineEstimate>> {
    let mut tracker = OnlineTracker::new(params)?;
    if tracker.bins() != z.bins() {
        return Err(Error::DimensionMismatch {
            what: "transition model bins",
            expected: z.bins(),
            found: tracker.bins(),
        });
    }
    let mut out = Vec::with_capacity(z.frames());
    for column in z.columns() {
        out.extend(tracker.push_frame(column)?);
    }
    out.extend(tracker.finalize());
    Ok(out)
}
