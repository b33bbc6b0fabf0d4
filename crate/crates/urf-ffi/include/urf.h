#ifndef URF_H
#define URF_H

/* Generated by cbindgen from the urf-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Stage cost selector for trajectory cost bounds.
 */
typedef enum UrfCostKind {
  URF_COST_KIND_QUADRATIC = 0,
  URF_COST_KIND_PENDULUM_UPRIGHT = 1,
} UrfCostKind;

/**
 * Status codes mirroring the library's error variants.
 */
typedef enum UrfStatus {
  URF_STATUS_OK = 0,
  URF_STATUS_NULL_POINTER = 1,
  URF_STATUS_INVALID_ARGUMENT = 2,
  URF_STATUS_DIMENSION_MISMATCH = 3,
  URF_STATUS_NUMERICAL = 4,
  URF_STATUS_RANK_DEFICIENT = 5,
  URF_STATUS_DIVERGED = 6,
  URF_STATUS_IO = 7,
  URF_STATUS_PARSE = 8,
  URF_STATUS_PANIC = 9,
} UrfStatus;

/**
 * Opaque model handle; create with `urf_model_load` or `urf_model_from_json`
 * and release with `urf_model_free`.
 */
typedef struct UrfModelHandle UrfModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buffer` (NUL
 * terminated, truncated to `capacity`). Returns the full message length in
 * bytes, excluding the terminator; call with a NULL buffer to query it.
 */
size_t urf_last_error_message(char *buffer, size_t capacity);

/**
 * Parses a model from a JSON bundle document held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum UrfStatus urf_model_from_json(const char *json, struct UrfModelHandle **out);

/**
 * Loads a model from a JSON bundle file on disk.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum UrfStatus urf_model_load(const char *path, struct UrfModelHandle **out);

/**
 * Releases a model handle; NULL is a no-op.
 *
 * # Safety
 * `model` must be a pointer previously returned by a load function, passed
 * at most once.
 */
void urf_model_free(struct UrfModelHandle *model);

/**
 * State dimension of the learned system.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum UrfStatus urf_model_state_dim(const struct UrfModelHandle *model, size_t *out);

/**
 * Feature dimension of the weight space (after any projection).
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum UrfStatus urf_model_feature_dim(const struct UrfModelHandle *model, size_t *out);

/**
 * One transition under the posterior-mean weights. `state` and `next` hold
 * `dim` doubles each; `dim` must equal the model's state dimension.
 *
 * # Safety
 * `state` and `next` must point to `dim` readable/writable doubles.
 */
enum UrfStatus urf_model_mean_step(const struct UrfModelHandle *model,
                                   const double *state,
                                   size_t dim,
                                   double *next);

/**
 * Posterior-mean rollout. `trajectory` receives `(horizon + 1) * dim`
 * doubles, row-major with the initial state first.
 *
 * # Safety
 * `x0` must point to `dim` doubles and `trajectory` to
 * `(horizon + 1) * dim` writable doubles.
 */
enum UrfStatus urf_model_rollout_mean(const struct UrfModelHandle *model,
                                      const double *x0,
                                      size_t dim,
                                      size_t horizon,
                                      double *trajectory);

/**
 * Best-case, posterior-mean, and worst-case accumulated trajectory costs
 * from `x0` over `horizon` steps under the chosen stage cost.
 *
 * # Safety
 * `x0` must point to `dim` doubles; `best`, `mean`, and `worst` must be
 * valid pointers.
 */
enum UrfStatus urf_model_cost_bounds(const struct UrfModelHandle *model,
                                     enum UrfCostKind cost,
                                     const double *x0,
                                     size_t dim,
                                     size_t horizon,
                                     size_t max_iterations,
                                     double *best,
                                     double *mean,
                                     double *worst);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URF_H */
