#ifndef KRIGLAB_H
#define KRIGLAB_H

/* Generated by cbindgen from kriglab-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KkStatus {
  KK_STATUS_OK = 0,
  KK_STATUS_NULL_POINTER = 1,
  KK_STATUS_INVALID_ARGUMENT = 2,
  KK_STATUS_DIMENSION_MISMATCH = 3,
  KK_STATUS_DUPLICATE_POINT = 4,
  KK_STATUS_NOT_POSITIVE_DEFINITE = 5,
  KK_STATUS_UNKNOWN_NAME = 6,
  KK_STATUS_OUT_OF_DOMAIN = 7,
  KK_STATUS_NUMERICAL = 8,
  KK_STATUS_PANIC = 99,
} KkStatus;

/**
 * Opaque fitted model.
 */
typedef struct KkModel KkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fit ordinary Kriging (Matérn 3/2) to `m` points of dimension `n`.
 *
 * `x` holds `m * n` values, `y` holds `m`, `lower`/`upper` hold `n` bounds.
 * On success `*out` receives a handle owned by the caller.
 *
 * # Safety
 * All pointers must be valid for the stated lengths; `out` must be writable.
 */
enum KkStatus kk_model_fit_ok(const double *x,
                              const double *y,
                              size_t m,
                              size_t n,
                              const double *lower,
                              const double *upper,
                              uint64_t seed,
                              struct KkModel **out);

/**
 * Predict at `k` raw points (`k * n` values). `var_out` may be null.
 *
 * # Safety
 * `model` must come from `kk_model_fit_ok`; buffers must hold the stated lengths.
 */
enum KkStatus kk_model_predict(const struct KkModel *model,
                               const double *x,
                               size_t k,
                               double *mean_out,
                               double *var_out);

/**
 * Closed-form leave-one-out means and variances, `m` values each. `var_out` may be null.
 *
 * # Safety
 * `model` must come from `kk_model_fit_ok`; buffers must hold `m` values.
 */
enum KkStatus kk_model_loo(const struct KkModel *model, double *mean_out, double *var_out);

/**
 * Sample count and input dimension.
 *
 * # Safety
 * `model` must come from `kk_model_fit_ok`; outputs must be writable or null.
 */
enum KkStatus kk_model_shape(const struct KkModel *model, size_t *m_out, size_t *n_out);

/**
 * Fitted length-scale parameters, `n` values.
 *
 * # Safety
 * `model` must come from `kk_model_fit_ok`; `theta_out` must hold `n` values.
 */
enum KkStatus kk_model_theta(const struct KkModel *model, double *theta_out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `kk_model_fit_ok` and not be used afterwards.
 */
void kk_model_free(struct KkModel *model);

/**
 * Input dimension of a named benchmark or oscillator problem.
 *
 * # Safety
 * `problem` must be a NUL-terminated string; `out` must be writable.
 */
enum KkStatus kk_problem_dim(const char *problem, size_t *out);

/**
 * Evaluate a named benchmark function at a raw point of length `n`.
 *
 * # Safety
 * `problem` must be NUL-terminated; `x` must hold `n` values; `out` writable.
 */
enum KkStatus kk_benchmark_eval(const char *problem, const double *x, size_t n, double *out);

/**
 * Evaluate an oscillator indicator (LLE or sticking time) at a raw parameter point.
 *
 * # Safety
 * `problem` must be NUL-terminated; `x` must hold `n` values; `out` writable.
 */
enum KkStatus kk_dynamics_eval(const char *problem, const double *x, size_t n, double *out);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must hold `len` bytes or be null.
 */
size_t kk_last_error_message(char *buf, size_t len);

/**
 * Static description of a status code.
 */
const char *kk_status_string(enum KkStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KRIGLAB_H */
