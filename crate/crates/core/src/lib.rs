//! Adaptive multi-trace carving: tracking weak frequency components in
//! spectrograms with dynamic programming.
//!
//! The pipeline is: ingest a signal ([`ingest`]), solve the regularized
//! single-trace problem ([`dp`]), decide per-frame presence ([`presence`]),
//! then erase found traces and repeat ([`carve`]) or do the same on a stream
//! with bounded memory ([`online`]). [`synth`] and [`metrics`] generate
//! ground truth and score estimates against it.
//!
//! Bins and frames are 0-based everywhere.

pub mod bench;
pub mod carve;
pub mod config;
pub mod dp;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod online;
pub mod presence;
pub mod service;
pub mod spectrogram;
pub mod synth;

pub use carve::{amtc_offline, compensate, effective_peak, estimate_trace_count, EffectivePeak, MultiTraceResult};
pub use dp::{accumulate, backtrack, track_single, AccumulatedMap, ConstraintRegion, Trace, TransitionModel};
pub use error::{Error, Result};
pub use online::{track_online, OnlineEstimate, OnlineParams, OnlineTracker};
pub use presence::{decide, merge_segments, rer, DetectionParams};
pub use spectrogram::{Axis, Spectrogram};
