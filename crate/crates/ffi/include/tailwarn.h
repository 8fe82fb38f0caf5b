#ifndef TAILWARN_H
#define TAILWARN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TW_FAMILY_LINEAR 0

#define TW_FAMILY_TANH_SHIFT 1

#define TW_FAMILY_MODIFIED_TANH 2

#define TW_NOISE_UNIFORM 0

#define TW_NOISE_TRUNCATED_NORMAL 1

#define TW_METHOD_LEADING 0

#define TW_METHOD_HIGHER 1

#define TW_METHOD_INTERVAL 2

#define TW_BOUNDARY_ESTIMATED 0

#define TW_BOUNDARY_TRUE 1

#define TW_SIDE_LOWER 0

#define TW_SIDE_UPPER 1

typedef enum TwStatus {
  TW_STATUS_OK = 0,
  TW_STATUS_NULL_POINTER = 1,
  TW_STATUS_INVALID_ARGUMENT = 2,
  TW_STATUS_NO_INTERVAL = 3,
  TW_STATUS_NO_CONVERGENCE = 4,
  TW_STATUS_DEGENERATE_FIT = 5,
  TW_STATUS_EMPTY_TAIL = 6,
  TW_STATUS_FAILED = 7,
  TW_STATUS_PANIC = 99,
} TwStatus;

/**
 * Opaque series handle.
 */
typedef struct TwSeries TwSeries;

/**
 * Result of [`tw_estimate`]. Fit coefficients are NaN for the interval
 * method.
 */
typedef struct TwEstimate {
  double lambda_hat;
  double a1;
  double a2;
  double x_hat_minus;
  size_t points_used;
} TwEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated description of a status.
 */
const char *tw_status_message(enum TwStatus status);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tw_version(void);

/**
 * Copies `len` values into a new series.
 *
 * # Safety
 * `values` must point to `len` readable doubles; `out` must be writable.
 */
enum TwStatus tw_series_from_values(const double *values, size_t len, struct TwSeries **out);

/**
 * Simulates `n` iterates after `burn_in` discarded ones from `y0`, using
 * stream `stream` of master seed `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum TwStatus tw_series_generate(uint32_t family_id,
                                 double a,
                                 double epsilon,
                                 uint32_t noise_id,
                                 double y0,
                                 size_t n,
                                 size_t burn_in,
                                 uint64_t seed,
                                 uint64_t stream,
                                 struct TwSeries **out);

/**
 * Number of values in a series; 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t tw_series_len(const struct TwSeries *series);

/**
 * Copies up to `capacity` values into `buffer` and stores the count in
 * `written`.
 *
 * # Safety
 * `series` must be a live handle, `buffer` must hold `capacity` doubles and
 * `written` must be writable.
 */
enum TwStatus tw_series_copy(const struct TwSeries *series,
                             double *buffer,
                             size_t capacity,
                             size_t *written);

/**
 * Releases a series; null is ignored.
 *
 * # Safety
 * `series` must be null or a handle not yet freed.
 */
void tw_series_free(struct TwSeries *series);

/**
 * Estimates `λ` from a series. `x_minus` is used only with
 * `TW_BOUNDARY_TRUE`; `q` is ignored by the interval method, which uses
 * 100 visits per interval.
 *
 * # Safety
 * `series` must be a live handle and `out` writable.
 */
enum TwStatus tw_estimate(const struct TwSeries *series,
                          uint32_t method_id,
                          size_t b,
                          double q,
                          uint32_t boundary_id,
                          double x_minus,
                          struct TwEstimate *out);

/**
 * Fold of the extremal map on `side`: writes the tangency point and the
 * critical parameter.
 *
 * # Safety
 * `x_star` and `a_star` must be writable.
 */
enum TwStatus tw_fold(uint32_t family_id,
                      double epsilon,
                      uint32_t side_id,
                      double *x_star,
                      double *a_star);

/**
 * Minimal invariant interval grown from `seed_point` and the slope of the
 * lower extremal map at its left end.
 *
 * # Safety
 * The three output pointers must be writable.
 */
enum TwStatus tw_lambda_true(uint32_t family_id,
                             double a,
                             double epsilon,
                             double seed_point,
                             double *x_minus,
                             double *x_plus,
                             double *lambda);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAILWARN_H */
