#ifndef ILV_H
#define ILV_H

/* Generated by cbindgen. Do not edit. */

#include <stdbool.h>
#include <stddef.h>

typedef enum {
  ILV_STATUS_OK = 0,
  ILV_STATUS_NULL_POINTER = 1,
  ILV_STATUS_INVALID_UTF8 = 2,
  ILV_STATUS_INVALID_JSON = 3,
  ILV_STATUS_INVALID_ARGUMENT = 4,
  ILV_STATUS_DIMENSION_MISMATCH = 5,
  ILV_STATUS_OUT_OF_RANGE = 6,
  ILV_STATUS_FAILED = 7,
  ILV_STATUS_PANIC = 99,
} IlvStatus;

typedef enum {
  ILV_BEHAVIOR_MODEL_A = 0,
  ILV_BEHAVIOR_MODEL_B = 1,
} IlvBehavior;

/**
 * A finished run.
 */
typedef struct IlvTrajectory IlvTrajectory;

/**
 * A voter utility.
 */
typedef struct IlvUtility IlvUtility;

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ilv_last_error(void);

/**
 * ℒq norm of `v[0..n]`. Pass `INFINITY` for the maximum norm.
 *
 * # Safety
 * `v` must point to `n` doubles and `out` to one writable double.
 */
IlvStatus ilv_lq_norm(const double *v, size_t n, double q, double *out);

/**
 * Builds a utility from its JSON description.
 *
 * # Safety
 * `json_text` must be a NUL-terminated string and `out` writable.
 */
IlvStatus ilv_utility_from_json(const char *json_text, IlvUtility **out);

/**
 * # Safety
 * `u` must come from [`ilv_utility_from_json`] and not be used afterwards.
 */
void ilv_utility_free(IlvUtility *u);

/**
 * # Safety
 * `u` must be a live handle; `out` writable.
 */
IlvStatus ilv_utility_dim(const IlvUtility *u, size_t *out);

/**
 * # Safety
 * `u` must be a live handle, `x` must point to `n` doubles, `out` writable.
 */
IlvStatus ilv_utility_evaluate(const IlvUtility *u, const double *x, size_t n, double *out);

/**
 * Best response from `x` within the ℒq ball of radius `r`. Writes `n`
 * coordinates to `out_point`; `out_bad_region` may be null.
 *
 * # Safety
 * `u` must be a live handle; `x` and `out_point` must hold `n` doubles.
 */
IlvStatus ilv_utility_best_response(const IlvUtility *u,
                                    IlvBehavior behavior,
                                    const double *x,
                                    size_t n,
                                    double r,
                                    double q,
                                    double *out_point,
                                    bool *out_bad_region);

/**
 * Runs ILV with an engine configuration and a voter population, both JSON.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` writable.
 */
IlvStatus ilv_run_from_json(const char *config_json,
                            const char *population_json,
                            IlvTrajectory **out);

/**
 * # Safety
 * `t` must come from [`ilv_run_from_json`] and not be used afterwards.
 */
void ilv_trajectory_free(IlvTrajectory *t);

/**
 * Number of iterates, the starting point included.
 *
 * # Safety
 * `t` must be a live handle.
 */
size_t ilv_trajectory_len(const IlvTrajectory *t);

/**
 * # Safety
 * `t` must be a live handle.
 */
size_t ilv_trajectory_dim(const IlvTrajectory *t);

/**
 * # Safety
 * `t` must be a live handle.
 */
bool ilv_trajectory_converged(const IlvTrajectory *t);

/**
 * Copies iterate `index` into `out[0..n]`; `out_radius` receives the
 * radius of that update, or 0 for the starting point, and may be null.
 *
 * # Safety
 * `t` must be a live handle; `out` must hold `n` doubles.
 */
IlvStatus ilv_trajectory_iterate(const IlvTrajectory *t,
                                 size_t index,
                                 double *out,
                                 size_t n,
                                 double *out_radius);

/**
 * Copies the terminal point into `out[0..n]`.
 *
 * # Safety
 * `t` must be a live handle; `out` must hold `n` doubles.
 */
IlvStatus ilv_trajectory_terminal(const IlvTrajectory *t, double *out, size_t n);

#endif  /* ILV_H */
