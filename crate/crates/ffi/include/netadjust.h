#ifndef NETADJUST_H
#define NETADJUST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. Values 2 to 6 are the pipeline stage codes.
 */
typedef enum NaStatus {
  NA_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or an out-of-range argument.
   */
  NA_STATUS_INVALID_ARGUMENT = 1,
  NA_STATUS_COMPILE = 2,
  NA_STATUS_SCAN = 3,
  NA_STATUS_ANALYZE = 4,
  NA_STATUS_ADJUST = 5,
  NA_STATUS_TRANSFORM = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  NA_STATUS_INTERNAL = 70,
} NaStatus;

/**
 * Opaque handle to a finished adjustment.
 */
typedef struct NaAdjustment NaAdjustment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *na_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void na_string_free(char *s);

/**
 * Runs compile, scan, analyze and adjust on in-memory inputs and writes the
 * combined JSON report to `out_json` (free with [`na_string_free`]).
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out_json` must be
 * valid for writes.
 */
enum NaStatus na_compute_json(const char *fieldbook,
                              const char *controls_csv,
                              const char *datum,
                              char **out_json);

/**
 * Adjusts the network and returns a handle in `out` (free with
 * [`na_adjustment_free`]).
 *
 * # Safety
 * As for [`na_compute_json`].
 */
enum NaStatus na_adjustment_run(const char *fieldbook,
                                const char *controls_csv,
                                const char *datum,
                                struct NaAdjustment **out);

/**
 * # Safety
 * `h` must come from [`na_adjustment_run`] and not have been freed. Null is
 * ignored.
 */
void na_adjustment_free(struct NaAdjustment *h);

/**
 * Number of iterations the adjustment took, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
uintptr_t na_adjustment_iterations(const struct NaAdjustment *h);

/**
 * Number of stations (fixed and free) in the result.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
uintptr_t na_adjustment_station_count(const struct NaAdjustment *h);

/**
 * A-posteriori variance of unit weight. Fails with `Adjust` when the
 * redundancy is zero.
 *
 * # Safety
 * `h` must be a live handle and `out` valid for writes.
 */
enum NaStatus na_adjustment_unit_variance(const struct NaAdjustment *h, double *out);

/**
 * Adjusted coordinates of `station`. `sd_e` and `sd_n` may be null; they
 * receive NaN for fixed stations and zero-redundancy solutions.
 *
 * # Safety
 * `h` must be a live handle, `station` a valid string and non-null output
 * pointers valid for writes.
 */
enum NaStatus na_adjustment_station(const struct NaAdjustment *h,
                                    const char *station,
                                    double *easting,
                                    double *northing,
                                    double *sd_e,
                                    double *sd_n);

/**
 * JSON adjustment report (free with [`na_string_free`]), or null for a null
 * handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
char *na_adjustment_report_json(const struct NaAdjustment *h);

/**
 * Least-squares line `y = a + b x` through `n` points. `s_yx` may be null
 * and receives NaN when `n == 2`.
 *
 * # Safety
 * `xs` and `ys` must point to `n` readable values; `a` and `b` must be valid
 * for writes.
 */
enum NaStatus na_fit_simple_line(const double *xs,
                                 const double *ys,
                                 uintptr_t n,
                                 double *a,
                                 double *b,
                                 double *s_yx);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETADJUST_H */
