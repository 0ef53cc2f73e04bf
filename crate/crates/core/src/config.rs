//! The declarative run document shared by the command line and the service.

use serde::{Deserialize, Serialize};

use crate::carve::{amtc_offline_constrained, MultiTraceResult};
use crate::dp::{ConstraintRegion, TransitionModel};
use crate::error::{Error, Result};
use crate::ingest::{FrameLayout, FreqRange, SignalOptions, StftConfig};
use crate::online::OnlineParams;
use crate::presence::DetectionParams;
use crate::spectrogram::Spectrogram;
use crate::synth::SynthConfig;

fn default_k() -> usize {
    3
}

fn default_lambda() -> f64 {
    1.0
}

/// Uniform-band transition model settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Band half-width per carving iteration, overriding `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_trace_k: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: default_k(),
            lambda: default_lambda(),
            per_trace_k: None,
        }
    }
}

impl ModelConfig {
    /// One model, or one per trace when `per_trace_k` is set.
    pub fn build(&self, bins: usize) -> Result<Vec<TransitionModel>> {
        match &self.per_trace_k {
            None => Ok(vec![TransitionModel::uniform_band(bins, self.k, self.lambda)?]),
            Some(ks) => ks.iter().map(|k| TransitionModel::uniform_band(bins, *k, self.lambda)).collect(),
        }
    }
}

fn default_delta_rer() -> f64 {
    2.41
}

fn default_gap() -> usize {
    30
}

/// Presence-test settings. Without `delta_f` the exclusion half-width is
/// the STFT main-lobe half-width, or 3 bins for a precomputed spectrogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    #[serde(default = "default_delta_rer")]
    pub delta_rer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_f: Option<usize>,
    #[serde(default = "default_gap")]
    pub delta1: usize,
    #[serde(default = "default_gap")]
    pub delta2: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            delta_rer: default_delta_rer(),
            delta_f: None,
            delta1: default_gap(),
            delta2: default_gap(),
        }
    }
}

impl DetectionConfig {
    pub const FALLBACK_DELTA_F: usize = 3;

    pub fn resolve(&self, layout: Option<&FrameLayout>) -> DetectionParams {
        let delta_f = self.delta_f.unwrap_or_else(|| {
            layout.map_or(Self::FALLBACK_DELTA_F, FrameLayout::main_lobe_half_width)
        });
        DetectionParams {
            delta_rer: self.delta_rer,
            delta_f,
            delta1: self.delta1,
            delta2: self.delta2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    #[serde(default = "OnlineConfig::default_k1")]
    pub k1: usize,
    #[serde(default = "OnlineConfig::default_k2")]
    pub k2: usize,
}

impl OnlineConfig {
    fn default_k1() -> usize {
        OnlineParams::DEFAULT_K1
    }

    fn default_k2() -> usize {
        OnlineParams::DEFAULT_K2
    }
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            k1: OnlineParams::DEFAULT_K1,
            k2: OnlineParams::DEFAULT_K2,
        }
    }
}

fn default_stft() -> StftConfig {
    StftConfig::rppg()
}

fn default_range() -> FreqRange {
    FreqRange::bpm(40.0, 240.0)
}

fn default_traces() -> usize {
    1
}

fn default_tau() -> f64 {
    crate::metrics::DEFAULT_TAU
}

/// Everything a run needs, as one JSON document. Every field has a default,
/// so `{}` is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub online: OnlineConfig,
    #[serde(default = "default_stft")]
    pub stft: StftConfig,
    #[serde(default = "default_range")]
    pub range: FreqRange,
    /// Needed only for single-column signal CSV input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
    /// Number of carving iterations.
    #[serde(default = "default_traces")]
    pub traces: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintRegion>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            detection: DetectionConfig::default(),
            online: OnlineConfig::default(),
            stft: default_stft(),
            range: default_range(),
            sample_rate_hz: None,
            traces: default_traces(),
            constraints: Vec::new(),
            tau: default_tau(),
            synth: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the input's dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.traces == 0 {
            return Err(Error::InvalidConfig("traces must be at least 1".into()));
        }
        if !(self.model.lambda >= 0.0 && self.model.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and nonnegative, found {}", self.model.lambda)));
        }
        if let Some(ks) = &self.model.per_trace_k {
            if ks.len() != self.traces {
                return Err(Error::DimensionMismatch {
                    what: "per-trace band widths",
                    expected: self.traces,
                    found: ks.len(),
                });
            }
        }
        if !(self.detection.delta_rer > 0.0 && self.detection.delta_rer.is_finite()) {
            return Err(Error::InvalidConfig("delta_rer must be positive".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig("tau must be finite and nonnegative".into()));
        }
        if let Some(rate) = self.sample_rate_hz {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
            }
        }
        if let Some(r) = self.constraints.iter().find(|r| r.iteration == 0 || r.iteration > self.traces) {
            return Err(Error::InvalidConfig(format!(
                "constraint iteration {} outside 1..={}",
                r.iteration, self.traces
            )));
        }
        self.stft.validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    pub fn signal_options(&self) -> SignalOptions {
        SignalOptions {
            stft: self.stft,
            range: self.range,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn models(&self, bins: usize) -> Result<Vec<TransitionModel>> {
        self.model.build(bins)
    }

    pub fn detection_params(&self, layout: Option<&FrameLayout>, bins: usize) -> Result<DetectionParams> {
        let det = self.detection.resolve(layout);
        det.validate(bins)?;
        Ok(det)
    }

    /// Offline multi-trace carving of `z` with this configuration.
    pub fn run_offline(&self, z: &Spectrogram, layout: Option<&FrameLayout>) -> Result<MultiTraceResult> {
        let models = self.models(z.bins())?;
        let det = self.detection_params(layout, z.bins())?;
        amtc_offline_constrained(z, self.traces, &models, &det, &self.constraints)
    }

    pub fn online_params(&self, layout: Option<&FrameLayout>, bins: usize) -> Result<OnlineParams> {
        Ok(OnlineParams::new(
            self.online.k1,
            self.online.k2,
            self.traces,
            self.models(bins)?,
            self.detection_params(layout, bins)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FreqUnit;

    #[test]
    fn empty_document_gives_paper_defaults() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.k, 3);
        assert_eq!(cfg.detection.delta_rer, 2.41);
        assert_eq!((cfg.detection.delta1, cfg.detection.delta2), (30, 30));
        assert_eq!((cfg.online.k1, cfg.online.k2), (50, 100));
        assert_eq!(cfg.tau, 0.03);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json_str(r#"{"modle": {}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"model": {"k": 2, "extra": 1}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"detection": {"delta": 1}}"#).is_err());
    }

    #[test]
    fn full_document_round_trips() {
        let cfg = RunConfig {
            model: ModelConfig {
                k: 2,
                lambda: 0.5,
                per_trace_k: Some(vec![60, 2]),
            },
            detection: DetectionConfig {
                delta_f: Some(5),
                ..DetectionConfig::default()
            },
            online: OnlineConfig { k1: 10, k2: 20 },
            stft: StftConfig::enf(),
            range: FreqRange::hz(49.5, 50.5),
            sample_rate_hz: Some(1000.0),
            traces: 2,
            constraints: vec![ConstraintRegion::rectangle([1, 3], [4, 6]).with_iteration(2)],
            tau: 0.05,
            synth: Some(SynthConfig::rppg(60.0, 0.005, Some(-8.0), 11)),
        };
        let text = cfg.to_json();
        let back = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn validation_catches_inconsistencies() {
        assert!(RunConfig::from_json_str(r#"{"traces": 0}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"traces": 2, "model": {"per_trace_k": [1]}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"constraints": [{"frames": [0, 1], "bins": [0, 1], "iteration": 2}]}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"model": {"lambda": -1}}"#).is_err());
    }

    #[test]
    fn delta_f_follows_the_main_lobe() {
        let cfg = RunConfig::default();
        let layout = cfg.stft.layout(30.0, FreqUnit::Bpm).unwrap();
        let det = cfg.detection_params(Some(&layout), 2000).unwrap();
        assert_eq!(det.delta_f, layout.main_lobe_half_width());
        assert_eq!(cfg.detection_params(None, 64).unwrap().delta_f, 3);
        assert!(cfg.detection_params(None, 6).is_err());
    }

    #[test]
    fn models_per_trace() {
        let cfg = RunConfig::from_json_str(r#"{"traces": 2, "model": {"per_trace_k": [4, 1]}}"#).unwrap();
        let models = cfg.models(20).unwrap();
        assert_eq!(models.len(), 2);
        assert_eq!(models[0].band_half_width(), Some(4));
        assert_eq!(models[1].band_half_width(), Some(1));
    }
}
