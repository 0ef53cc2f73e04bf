//! C interface to the `amtc` tracker.
//!
//! Every fallible function returns an [`AmtcStatus`]; on failure a message
//! for the calling thread is available from [`amtc_last_error_message`].
//! Objects cross the boundary as opaque pointers and are released with the
//! matching `*_free` function. Panics never unwind into the caller.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use amtc::carve::MultiTraceResult;
use amtc::config::RunConfig;
use amtc::{Axis, Error, OnlineTracker, Spectrogram};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmtcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    EmptyInput = 4,
    Malformed = 5,
    UnsupportedEncoding = 6,
    SignalTooShort = 7,
    InvalidConfig = 8,
    DimensionMismatch = 9,
    ConstraintUnsatisfiable = 10,
    ZeroVariance = 11,
    /// An index or buffer length was out of range.
    OutOfRange = 12,
    Panic = 13,
}

impl From<&Error> for AmtcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => AmtcStatus::Io,
            Error::EmptyInput => AmtcStatus::EmptyInput,
            Error::Malformed { .. } => AmtcStatus::Malformed,
            Error::UnsupportedEncoding(_) => AmtcStatus::UnsupportedEncoding,
            Error::SignalTooShort { .. } => AmtcStatus::SignalTooShort,
            Error::InvalidConfig(_) => AmtcStatus::InvalidConfig,
            Error::DimensionMismatch { .. } => AmtcStatus::DimensionMismatch,
            Error::ConstraintUnsatisfiable { .. } => AmtcStatus::ConstraintUnsatisfiable,
            Error::ZeroVariance => AmtcStatus::ZeroVariance,
        }
    }
}

/// Opaque magnitude spectrogram.
pub struct AmtcSpectrogram(Spectrogram);

/// Opaque offline tracking result.
pub struct AmtcResult(MultiTraceResult);

/// Opaque streaming tracker.
pub struct AmtcOnline {
    tracker: OnlineTracker,
    pending: Vec<amtc::OnlineEstimate>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(AmtcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AmtcStatus::NullPointer, format!("{what} is null"))
}

fn out_of_range(message: impl Into<String>) -> Failure {
    Failure(AmtcStatus::OutOfRange, message.into())
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AmtcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmtcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            AmtcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(AmtcStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn config(json: *const c_char) -> Result<RunConfig, Failure> {
    if json.is_null() {
        Ok(RunConfig::default())
    } else {
        Ok(RunConfig::from_json_str(text(json, "config")?)?)
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn amtc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn amtc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn amtc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a spectrogram from `bins * frames` frame-major values
/// (`values[n * bins + m]`) and its frequency and time axes.
#[no_mangle]
pub unsafe extern "C" fn amtc_spectrogram_new(
    bins: usize,
    frames: usize,
    values: *const f64,
    freq_origin: f64,
    freq_step: f64,
    time_origin: f64,
    time_step: f64,
    out: *mut *mut AmtcSpectrogram,
) -> AmtcStatus {
    guard(|| {
        let count = bins
            .checked_mul(frames)
            .ok_or_else(|| out_of_range("bins * frames overflows"))?;
        let values = slice(values, count, "values")?.to_vec();
        let z = Spectrogram::new(
            bins,
            frames,
            values,
            Axis::new(freq_origin, freq_step),
            Axis::new(time_origin, time_step),
        )?;
        store(out, AmtcSpectrogram(z))
    })
}

/// Loads a WAV, signal CSV or spectrogram CSV file. Signals are transformed
/// with the STFT settings of `config_json` (null for defaults).
#[no_mangle]
pub unsafe extern "C" fn amtc_spectrogram_load(
    path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut AmtcSpectrogram,
) -> AmtcStatus {
    guard(|| {
        let path = text(path, "path")?;
        let cfg = config(config_json)?;
        let loaded = amtc::ingest::load_spectrogram(path, &cfg.signal_options())?;
        store(out, AmtcSpectrogram(loaded.spectrogram))
    })
}

#[no_mangle]
pub unsafe extern "C" fn amtc_spectrogram_free(z: *mut AmtcSpectrogram) {
    if !z.is_null() {
        drop(Box::from_raw(z));
    }
}

/// Number of frequency bins, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn amtc_spectrogram_bins(z: *const AmtcSpectrogram) -> usize {
    z.as_ref().map_or(0, |z| z.0.bins())
}

/// Number of frames, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn amtc_spectrogram_frames(z: *const AmtcSpectrogram) -> usize {
    z.as_ref().map_or(0, |z| z.0.frames())
}

/// Offline multi-trace tracking with the JSON run configuration
/// `config_json` (null for defaults).
#[no_mangle]
pub unsafe extern "C" fn amtc_track(
    z: *const AmtcSpectrogram,
    config_json: *const c_char,
    out: *mut *mut AmtcResult,
) -> AmtcStatus {
    guard(|| {
        let z = borrow(z, "spectrogram")?;
        let cfg = config(config_json)?;
        let result = cfg.run_offline(&z.0, None)?;
        store(out, AmtcResult(result))
    })
}

#[no_mangle]
pub unsafe extern "C" fn amtc_result_free(r: *mut AmtcResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of traces, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn amtc_result_traces(r: *const AmtcResult) -> usize {
    r.as_ref().map_or(0, |r| r.0.len())
}

/// Number of frames, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn amtc_result_frames(r: *const AmtcResult) -> usize {
    r.as_ref().map_or(0, |r| r.0.frames())
}

fn trace_index(r: &MultiTraceResult, trace: usize, len: usize) -> Result<(), Failure> {
    if trace >= r.len() {
        return Err(out_of_range(format!("trace {trace} of {}", r.len())));
    }
    if len != r.frames() {
        return Err(out_of_range(format!("buffer holds {len} values, result has {} frames", r.frames())));
    }
    Ok(())
}

/// Copies trace `trace`'s bin indices into `out` (length `len` = frames).
#[no_mangle]
pub unsafe extern "C" fn amtc_result_bins(r: *const AmtcResult, trace: usize, out: *mut usize, len: usize) -> AmtcStatus {
    guard(|| {
        let r = &borrow(r, "result")?.0;
        trace_index(r, trace, len)?;
        slice_mut(out, len, "out")?.copy_from_slice(r.traces[trace].bins());
        Ok(())
    })
}

/// Copies trace `trace`'s frequencies in axis units into `out`.
#[no_mangle]
pub unsafe extern "C" fn amtc_result_frequencies(r: *const AmtcResult, trace: usize, out: *mut f64, len: usize) -> AmtcStatus {
    guard(|| {
        let r = &borrow(r, "result")?.0;
        trace_index(r, trace, len)?;
        slice_mut(out, len, "out")?.copy_from_slice(&r.frequencies(trace));
        Ok(())
    })
}

/// Copies trace `trace`'s voiced mask (1 voiced, 0 silent) into `out`.
#[no_mangle]
pub unsafe extern "C" fn amtc_result_voiced(r: *const AmtcResult, trace: usize, out: *mut u8, len: usize) -> AmtcStatus {
    guard(|| {
        let r = &borrow(r, "result")?.0;
        trace_index(r, trace, len)?;
        for (o, v) in slice_mut(out, len, "out")?.iter_mut().zip(&r.masks[trace]) {
            *o = u8::from(*v);
        }
        Ok(())
    })
}

/// Mean relative energy ratio of trace `trace`; may be `+inf`.
#[no_mangle]
pub unsafe extern "C" fn amtc_result_mean_rer(r: *const AmtcResult, trace: usize, out: *mut f64) -> AmtcStatus {
    guard(|| {
        let r = &borrow(r, "result")?.0;
        let v = *r
            .mean_rer
            .get(trace)
            .ok_or_else(|| out_of_range(format!("trace {trace} of {}", r.len())))?;
        *borrow_mut(out, "out")? = v;
        Ok(())
    })
}

/// The result as JSON; release with [`amtc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn amtc_result_to_json(r: *const AmtcResult, out: *mut *mut c_char) -> AmtcStatus {
    guard(|| {
        let r = &borrow(r, "result")?.0;
        let out = borrow_mut(out, "out")?;
        *out = CString::new(r.to_json()).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// Streaming tracker for frames of `bins` values, configured by
/// `config_json` (null for defaults; `online.k1`, `online.k2` and `traces`
/// apply).
#[no_mangle]
pub unsafe extern "C" fn amtc_online_new(bins: usize, config_json: *const c_char, out: *mut *mut AmtcOnline) -> AmtcStatus {
    guard(|| {
        let cfg = config(config_json)?;
        let tracker = OnlineTracker::new(cfg.online_params(None, bins)?)?;
        store(
            out,
            AmtcOnline {
                tracker,
                pending: Vec::new(),
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn amtc_online_free(t: *mut AmtcOnline) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of layers each estimate carries, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn amtc_online_traces(t: *const AmtcOnline) -> usize {
    t.as_ref().map_or(0, |t| t.tracker.params().traces)
}

/// Feeds one frame of `len` values. Any estimate it releases is queued for
/// [`amtc_online_next`].
#[no_mangle]
pub unsafe extern "C" fn amtc_online_push(t: *mut AmtcOnline, frame: *const f64, len: usize) -> AmtcStatus {
    guard(|| {
        let t = borrow_mut(t, "tracker")?;
        let frame = slice(frame, len, "frame")?;
        if let Some(e) = t.tracker.push_frame(frame)? {
            t.pending.push(e);
        }
        Ok(())
    })
}

/// Queues estimates for every frame not yet released. Call after the last frame.
#[no_mangle]
pub unsafe extern "C" fn amtc_online_finish(t: *mut AmtcOnline) -> AmtcStatus {
    guard(|| {
        let t = borrow_mut(t, "tracker")?;
        let rest = t.tracker.finalize();
        t.pending.extend(rest);
        Ok(())
    })
}

/// Pops the oldest queued estimate. `bins` and `voiced` hold `traces`
/// entries each. `*available` is set to 0 when the queue is empty, in which
/// case nothing else is written.
#[no_mangle]
pub unsafe extern "C" fn amtc_online_next(
    t: *mut AmtcOnline,
    available: *mut u8,
    frame: *mut usize,
    bins: *mut usize,
    voiced: *mut u8,
    traces: usize,
) -> AmtcStatus {
    guard(|| {
        let t = borrow_mut(t, "tracker")?;
        let available = borrow_mut(available, "available")?;
        if t.pending.is_empty() {
            *available = 0;
            return Ok(());
        }
        let layers = t.tracker.params().traces;
        if traces != layers {
            return Err(out_of_range(format!("buffers hold {traces} layers, tracker has {layers}")));
        }
        let frame = borrow_mut(frame, "frame")?;
        let bins = slice_mut(bins, traces, "bins")?;
        let voiced = slice_mut(voiced, traces, "voiced")?;
        let e = t.pending.remove(0);
        *frame = e.frame;
        bins.copy_from_slice(&e.bins);
        for (o, v) in voiced.iter_mut().zip(&e.voiced) {
            *o = u8::from(*v);
        }
        *available = 1;
        Ok(())
    })
}
