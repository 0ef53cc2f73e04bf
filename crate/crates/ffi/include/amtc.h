#ifndef AMTC_H
#define AMTC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum AmtcStatus {
  AMTC_STATUS_OK = 0,
  AMTC_STATUS_NULL_POINTER = 1,
  AMTC_STATUS_INVALID_UTF8 = 2,
  AMTC_STATUS_IO = 3,
  AMTC_STATUS_EMPTY_INPUT = 4,
  AMTC_STATUS_MALFORMED = 5,
  AMTC_STATUS_UNSUPPORTED_ENCODING = 6,
  AMTC_STATUS_SIGNAL_TOO_SHORT = 7,
  AMTC_STATUS_INVALID_CONFIG = 8,
  AMTC_STATUS_DIMENSION_MISMATCH = 9,
  AMTC_STATUS_CONSTRAINT_UNSATISFIABLE = 10,
  AMTC_STATUS_ZERO_VARIANCE = 11,
  /**
   * An index or buffer length was out of range.
   */
  AMTC_STATUS_OUT_OF_RANGE = 12,
  AMTC_STATUS_PANIC = 13,
} AmtcStatus;

/**
 * Opaque streaming tracker.
 */
typedef struct AmtcOnline AmtcOnline;

/**
 * Opaque offline tracking result.
 */
typedef struct AmtcResult AmtcResult;

/**
 * Opaque magnitude spectrogram.
 */
typedef struct AmtcSpectrogram AmtcSpectrogram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *amtc_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *amtc_version(void);

/**
 * Releases a string returned by this library.
 */
void amtc_string_free(char *s);

/**
 * Builds a spectrogram from `bins * frames` frame-major values
 * (`values[n * bins + m]`) and its frequency and time axes.
 */
enum AmtcStatus amtc_spectrogram_new(size_t bins,
                                     size_t frames,
                                     const double *values,
                                     double freq_origin,
                                     double freq_step,
                                     double time_origin,
                                     double time_step,
                                     struct AmtcSpectrogram **out);

/**
 * Loads a WAV, signal CSV or spectrogram CSV file. Signals are transformed
 * with the STFT settings of `config_json` (null for defaults).
 */
enum AmtcStatus amtc_spectrogram_load(const char *path,
                                      const char *config_json,
                                      struct AmtcSpectrogram **out);

void amtc_spectrogram_free(struct AmtcSpectrogram *z);

/**
 * Number of frequency bins, or 0 for a null handle.
 */
size_t amtc_spectrogram_bins(const struct AmtcSpectrogram *z);

/**
 * Number of frames, or 0 for a null handle.
 */
size_t amtc_spectrogram_frames(const struct AmtcSpectrogram *z);

/**
 * Offline multi-trace tracking with the JSON run configuration
 * `config_json` (null for defaults).
 */
enum AmtcStatus amtc_track(const struct AmtcSpectrogram *z,
                           const char *config_json,
                           struct AmtcResult **out);

void amtc_result_free(struct AmtcResult *r);

/**
 * Number of traces, or 0 for a null handle.
 */
size_t amtc_result_traces(const struct AmtcResult *r);

/**
 * Number of frames, or 0 for a null handle.
 */
size_t amtc_result_frames(const struct AmtcResult *r);

/**
 * Copies trace `trace`'s bin indices into `out` (length `len` = frames).
 */
enum AmtcStatus amtc_result_bins(const struct AmtcResult *r, size_t trace, size_t *out, size_t len);

/**
 * Copies trace `trace`'s frequencies in axis units into `out`.
 */
enum AmtcStatus amtc_result_frequencies(const struct AmtcResult *r,
                                        size_t trace,
                                        double *out,
                                        size_t len);

/**
 * Copies trace `trace`'s voiced mask (1 voiced, 0 silent) into `out`.
 */
enum AmtcStatus amtc_result_voiced(const struct AmtcResult *r,
                                   size_t trace,
                                   uint8_t *out,
                                   size_t len);

/**
 * Mean relative energy ratio of trace `trace`; may be `+inf`.
 */
enum AmtcStatus amtc_result_mean_rer(const struct AmtcResult *r, size_t trace, double *out);

/**
 * The result as JSON; release with [`amtc_string_free`].
 */
enum AmtcStatus amtc_result_to_json(const struct AmtcResult *r, char **out);

/**
 * Streaming tracker for frames of `bins` values, configured by
 * `config_json` (null for defaults; `online.k1`, `online.k2` and `traces`
 * apply).
 */
enum AmtcStatus amtc_online_new(size_t bins, const char *config_json, struct AmtcOnline **out);

void amtc_online_free(struct AmtcOnline *t);

/**
 * Number of layers each estimate carries, or 0 for a null handle.
 */
size_t amtc_online_traces(const struct AmtcOnline *t);

/**
 * Feeds one frame of `len` values. Any estimate it releases is queued for
 * [`amtc_online_next`].
 */
enum AmtcStatus amtc_online_push(struct AmtcOnline *t, const double *frame, size_t len);

/**
 * Queues estimates for every frame not yet released. Call after the last frame.
 */
enum AmtcStatus amtc_online_finish(struct AmtcOnline *t);

/**
 * Pops the oldest queued estimate. `bins` and `voiced` hold `traces`
 * entries each. `*available` is set to 0 when the queue is empty, in which
 * case nothing else is written.
 */
enum AmtcStatus amtc_online_next(struct AmtcOnline *t,
                                 uint8_t *available,
                                 size_t *frame,
                                 size_t *bins,
                                 uint8_t *voiced,
                                 size_t traces);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* AMTC_H */
