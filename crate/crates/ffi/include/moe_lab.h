#ifndef MOE_LAB_H
#define MOE_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MoeStatus {
  MOE_STATUS_OK = 0,
  MOE_STATUS_NULL_POINTER = 1,
  MOE_STATUS_INVALID_ARGUMENT = 2,
  MOE_STATUS_SHAPE = 3,
  MOE_STATUS_PARSE = 4,
  MOE_STATUS_IO = 5,
  MOE_STATUS_NUMERIC = 6,
  MOE_STATUS_PANIC = 7,
} MoeStatus;

/**
 * Opaque dataset handle.
 */
typedef struct MoeDataset MoeDataset;

/**
 * Opaque fit result handle.
 */
typedef struct MoeFitResult MoeFitResult;

/**
 * Opaque model handle.
 */
typedef struct MoeModel MoeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *moe_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *moe_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void moe_string_free(char *s);

/**
 * Parses a model JSON document `{lambda, base:{kind, expert, a0, b0, nu0}, prompt:{expert, a, b, nu}}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MoeStatus moe_model_from_json(const char *json,
                                   struct MoeModel **out);

/**
 * Serializes a model to JSON; free the result with [`moe_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum MoeStatus moe_model_to_json(const struct MoeModel *model, char **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed once.
 */
void moe_model_free(struct MoeModel *model);

/**
 * Covariate dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t moe_model_dim(const struct MoeModel *model);

/**
 * Mixture log-density at one point.
 *
 * # Safety
 * `x` must hold `d` doubles; `model` must be live; `out` writable.
 */
enum MoeStatus moe_model_logpdf(const struct MoeModel *model,
                                const double *x,
                                size_t d,
                                double y,
                                double *out);

/**
 * Builds a dataset from row-major `x` (`n × d`) and `y` (`n`).
 *
 * # Safety
 * `x` must hold `n·d` doubles and `y` `n` doubles; `out` writable.
 */
enum MoeStatus moe_dataset_new(const double *x,
                               const double *y,
                               size_t n,
                               size_t d,
                               struct MoeDataset **out);

/**
 * Reads a CSV with header `x1..xd,y`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum MoeStatus moe_dataset_load_csv(const char *path, struct MoeDataset **out);

/**
 * # Safety
 * `data` must be live; `path` NUL-terminated.
 */
enum MoeStatus moe_dataset_save_csv(const struct MoeDataset *data, const char *path);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or live.
 */
size_t moe_dataset_len(const struct MoeDataset *data);

/**
 * Covariate dimension, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or live.
 */
size_t moe_dataset_dim(const struct MoeDataset *data);

/**
 * Copies row `i` into `x` (`d` doubles) and its response into `y`.
 *
 * # Safety
 * `x` must have room for `d` doubles; `y` writable.
 */
enum MoeStatus moe_dataset_row(const struct MoeDataset *data,
                               size_t i,
                               double *x,
                               size_t d,
                               double *y);

/**
 * # Safety
 * `data` must be null or a handle from this library, freed once.
 */
void moe_dataset_free(struct MoeDataset *data);

/**
 * Draws `n` rows from `model` with a ChaCha8 stream seeded by `seed`.
 *
 * # Safety
 * `model` must be live; `out` writable.
 */
enum MoeStatus moe_sample(const struct MoeModel *model,
                          size_t n,
                          uint64_t seed,
                          struct MoeDataset **out);

/**
 * Total log-likelihood of `data` under `model`.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum MoeStatus moe_log_likelihood(const struct MoeModel *model,
                                  const struct MoeDataset *data,
                                  double *out);

/**
 * Fits `(λ, G)` by EM. The frozen component and experts come from `model`,
 * whose `λ` and prompt also centre the default near-truth initialization.
 * `options_json` may be null for defaults.
 *
 * # Safety
 * Handles must be live; `options_json` null or NUL-terminated; `out` writable.
 */
enum MoeStatus moe_fit(const struct MoeModel *model,
                       const struct MoeDataset *data,
                       const char *options_json,
                       uint64_t seed,
                       struct MoeFitResult **out);

/**
 * Fitted mixing proportion, log-likelihood, iteration count and convergence flag.
 * Any output pointer may be null.
 *
 * # Safety
 * `result` must be live.
 */
enum MoeStatus moe_fit_result_summary(const struct MoeFitResult *result,
                                      double *lambda,
                                      double *loglik,
                                      size_t *iters,
                                      bool *converged);

/**
 * Copies the fitted prompt `(a, b, ν)`; `a` must hold `d` doubles.
 *
 * # Safety
 * `result` live; `a` has room for `d` doubles; `b`, `nu` writable.
 */
enum MoeStatus moe_fit_result_prompt(const struct MoeFitResult *result,
                                     double *a,
                                     size_t d,
                                     double *b,
                                     double *nu);

/**
 * Full result as JSON; free with [`moe_string_free`].
 *
 * # Safety
 * `result` live; `out` writable.
 */
enum MoeStatus moe_fit_result_to_json(const struct MoeFitResult *result, char **out);

/**
 * # Safety
 * `result` must be null or a handle from this library, freed once.
 */
void moe_fit_result_free(struct MoeFitResult *result);

/**
 * Least-squares slope of `log err` on `log n` over the finite positive points.
 *
 * # Safety
 * `n` and `err` must hold `len` doubles; outputs writable (r2 may be null).
 */
enum MoeStatus moe_fit_slope(const double *n,
                             const double *err,
                             size_t len,
                             double *slope,
                             double *intercept,
                             double *r2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOE_LAB_H */
