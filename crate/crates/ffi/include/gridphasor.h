#ifndef GRIDPHASOR_H
#define GRIDPHASOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Non-zero values describe the failure class; the
 * thread-local `gp_last_error` message carries the detail.
 */
typedef enum GpStatus {
  GpStatus_Ok = 0,
  /**
   * A pointer was null or an argument failed validation.
   */
  GpStatus_InvalidArgument = 1,
  /**
   * Unknown stream, version, or file.
   */
  GpStatus_NotFound = 2,
  /**
   * Conflicting input, e.g. duplicate timestamps in one batch.
   */
  GpStatus_Conflict = 3,
  /**
   * The computation could not be completed.
   */
  GpStatus_Runtime = 4,
  /**
   * I/O failure.
   */
  GpStatus_Io = 5,
} GpStatus;

/**
 * Opaque handle to an open store.
 */
typedef struct GpStore GpStore;

/**
 * One aligned statistics window. When `count` is zero the min/max/mean
 * fields are meaningless and set to zero.
 */
typedef struct GpStatPoint {
  int64_t window_start_ns;
  uint32_t pointwidth;
  uint64_t count;
  double min;
  double max;
  double mean;
} GpStatPoint;

/**
 * Half-open changed interval in nanoseconds.
 */
typedef struct GpTimeRange {
  int64_t start_ns;
  int64_t end_ns;
} GpTimeRange;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure in this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gp_last_error(void);

/**
 * Wrap an angle to the half-open interval (-pi, pi].
 *
 * # Safety
 * `out` must point to writable memory for one f64.
 */
enum GpStatus gp_wrap_angle(double theta, double *out);

/**
 * Wrapped angle difference `a - b` in (-pi, pi].
 *
 * # Safety
 * `out` must point to writable memory for one f64.
 */
enum GpStatus gp_angle_diff(double a, double b, double *out);

/**
 * Total vector error between a measured and a reference phasor
 * (magnitudes RMS, angles radians).
 *
 * # Safety
 * `out` must point to writable memory for one f64.
 */
enum GpStatus gp_tve(double measured_mag,
                     double measured_ang,
                     double reference_mag,
                     double reference_ang,
                     double *out);

/**
 * Transmission power transfer approximation `(v1*v2/x) sin(delta)`.
 *
 * # Safety
 * `out` must point to writable memory for one f64.
 */
enum GpStatus gp_power_flow_approx(double v1, double v2, double x, double delta, double *out);

/**
 * Single-bin DFT phasor of one nominal cycle of waveform samples
 * (RMS magnitude, cosine-referenced angle).
 *
 * # Safety
 * `samples` must point to `len` readable f64 values; `out_mag` and
 * `out_ang` must be writable.
 */
enum GpStatus gp_estimate_phasor(const double *samples,
                                 uintptr_t len,
                                 double nominal_freq,
                                 double *out_mag,
                                 double *out_ang);

/**
 * Open (or create) a store directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be writable. The returned
 * handle must be released with `gp_store_close`.
 */
enum GpStatus gp_store_open(const char *dir, struct GpStore **out);

/**
 * Create an ephemeral in-memory store.
 *
 * # Safety
 * `out` must be writable; release the handle with `gp_store_close`.
 */
enum GpStatus gp_store_in_memory(struct GpStore **out);

/**
 * Release a store handle. Null is a no-op.
 *
 * # Safety
 * `store` must be a handle returned by this library, not yet closed.
 */
void gp_store_close(struct GpStore *store);

/**
 * Insert a batch of points; the new version number is written to
 * `out_version`.
 *
 * # Safety
 * `timestamps` and `values` must each point to `len` readable elements;
 * `key` must be NUL-terminated; `out_version` must be writable.
 */
enum GpStatus gp_store_insert(const struct GpStore *store,
                              const char *key,
                              const int64_t *timestamps,
                              const double *values,
                              uintptr_t len,
                              uint64_t *out_version);

/**
 * Latest committed version of a stream.
 *
 * # Safety
 * `key` must be NUL-terminated; `out_version` must be writable.
 */
enum GpStatus gp_store_latest_version(const struct GpStore *store,
                                      const char *key,
                                      uint64_t *out_version);

/**
 * Raw points of `[t0, t1)` at a version. On success `*out_timestamps` and
 * `*out_values` hold `*out_len` elements; release both with
 * `gp_free_points`.
 *
 * # Safety
 * All output pointers must be writable; `key` must be NUL-terminated.
 */
enum GpStatus gp_store_query_raw(const struct GpStore *store,
                                 const char *key,
                                 int64_t t0,
                                 int64_t t1,
                                 uint64_t version,
                                 int64_t **out_timestamps,
                                 double **out_values,
                                 uintptr_t *out_len);

/**
 * Release arrays returned by `gp_store_query_raw`.
 *
 * # Safety
 * Pass exactly the pointers and length produced by one successful
 * `gp_store_query_raw` call; do not use them afterwards.
 */
void gp_free_points(int64_t *timestamps, double *values, uintptr_t len);

/**
 * Windowed statistics on the aligned `2^pointwidth` grid covering
 * `[t0, t1)`. Release the array with `gp_free_stat_points`.
 *
 * # Safety
 * Output pointers must be writable; `key` must be NUL-terminated.
 */
enum GpStatus gp_store_query_windows(const struct GpStore *store,
                                     const char *key,
                                     int64_t t0,
                                     int64_t t1,
                                     uint8_t pointwidth,
                                     uint64_t version,
                                     struct GpStatPoint **out_points,
                                     uintptr_t *out_len);

/**
 * Release an array returned by `gp_store_query_windows`.
 *
 * # Safety
 * Pass exactly the pointer and length produced by one successful call.
 */
void gp_free_stat_points(struct GpStatPoint *points, uintptr_t len);

/**
 * Aligned intervals whose values differ between two versions. Release with
 * `gp_free_time_ranges`.
 *
 * # Safety
 * Output pointers must be writable; `key` must be NUL-terminated.
 */
enum GpStatus gp_store_changed_ranges(const struct GpStore *store,
                                      const char *key,
                                      uint64_t version_a,
                                      uint64_t version_b,
                                      uint8_t pointwidth,
                                      struct GpTimeRange **out_ranges,
                                      uintptr_t *out_len);

/**
 * Release an array returned by `gp_store_changed_ranges`.
 *
 * # Safety
 * Pass exactly the pointer and length produced by one successful call.
 */
void gp_free_time_ranges(struct GpTimeRange *ranges, uintptr_t len);

/**
 * Run a scenario file end to end against the given store handle, writing
 * reports under `out_dir`. On success `*out_manifest_json` holds the run
 * manifest as a JSON string; release it with `gp_free_string`. A negative
 * `seed` keeps the scenario's own seed.
 *
 * # Safety
 * Paths must be NUL-terminated; `out_manifest_json` must be writable.
 */
enum GpStatus gp_run_scenario(const struct GpStore *store,
                              const char *scenario_path,
                              const char *out_dir,
                              int64_t seed,
                              char **out_manifest_json);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * Pass exactly a pointer produced by this library, once.
 */
void gp_free_string(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDPHASOR_H */
