/* C interface of the ctsmooth estimation library. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. On anything but `Ok`, a human-readable
 * reason is available from [`cts_last_error_message`].
 */
typedef enum CtsStatus {
  CTS_STATUS_OK = 0,
  CTS_STATUS_NULL_POINTER = 1,
  CTS_STATUS_INVALID_INPUT = 2,
  CTS_STATUS_UNSUPPORTED = 3,
  CTS_STATUS_FAILURE = 4,
  CTS_STATUS_PANIC = 5,
} CtsStatus;

/**
 * Opaque handle to a continuous-time model.
 */
typedef struct CtsModel CtsModel;

/**
 * Opaque handle to a completed smoothing pass, ready for queries.
 */
typedef struct CtsSmoother CtsSmoother;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cts_last_error_message(void);

/**
 * Builds a unit-DC-gain lowpass model of the given order and cutoff,
 * driven at level `sigma_u` and observed with noise deviation `sigma_z`.
 * On success writes a handle to `out`; release it with [`cts_model_free`].
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum CtsStatus cts_model_butterworth(size_t order,
                                     double fc_hz,
                                     double sigma_u,
                                     double sigma_z,
                                     struct CtsModel **out);

/**
 * Builds a model dX = (A X + h)dt + B dU, Y = C X from row-major buffers:
 * `a` is n*n, `b` is n*m, `c` is p*n, `h` is n (or null for zero), and
 * `vz` holds the p per-channel observation noise variances.
 *
 * # Safety
 * The matrix buffers must be readable for the lengths stated above, and
 * `out` must be valid for writing one pointer.
 */
enum CtsStatus cts_model_new(size_t state_dim,
                             size_t input_dim,
                             size_t output_dim,
                             const double *a,
                             const double *b,
                             const double *c,
                             const double *h,
                             double sigma_u,
                             const double *vz,
                             struct CtsModel **out);

/**
 * Releases a model handle. Null is accepted and ignored.
 *
 * # Safety
 * `model` must be null or a handle from a `cts_model_*` constructor that
 * has not been freed already.
 */
void cts_model_free(struct CtsModel *model);

/**
 * Writes the state, input, and output dimensions of the model.
 *
 * # Safety
 * `model` must be a live model handle; non-null outputs must each be
 * valid for writing one `size_t`.
 */
enum CtsStatus cts_model_dims(const struct CtsModel *model,
                              size_t *state_dim,
                              size_t *input_dim,
                              size_t *output_dim);

/**
 * Stationary output power and observation SNR of a scalar-output model.
 * Pass a positive `fc_hz` to also get the rate-normalized constant
 * E[Y^2]/(sigma_u^2 fc); otherwise `snr_constant` receives NaN. Output
 * pointers may be null when the value is not wanted.
 *
 * # Safety
 * `model` must be a live model handle; non-null outputs must each be
 * valid for writing one `double`.
 */
enum CtsStatus cts_snr(const struct CtsModel *model,
                       double fc_hz,
                       double *ey2,
                       double *snr_db,
                       double *snr_constant);

/**
 * Runs the forward-backward sweep over `count` samples. `times` must be
 * strictly increasing and start after `t0`; `values` is row-major
 * `count * output_dim`. `t_end` extends the estimation range beyond the
 * last sample (pass NaN for the default). A prior at `t0` can be supplied
 * as `prior_mean` (n) and `prior_cov` (n*n row-major); pass null for the
 * stationary prior, which requires a stable model. On success writes a
 * handle to `out`; release it with [`cts_smoother_free`].
 *
 * # Safety
 * `model` must be a live model handle; `times`, `values`, and the prior
 * buffers must be readable for the lengths stated above; `out` must be
 * valid for writing one pointer.
 */
enum CtsStatus cts_smoother_run(const struct CtsModel *model,
                                const double *times,
                                const double *values,
                                size_t count,
                                double t0,
                                double t_end,
                                const double *prior_mean,
                                const double *prior_cov,
                                struct CtsSmoother **out);

/**
 * Posterior at time `t` inside the estimation range. Non-null outputs are
 * filled: `x_mean` (n), `x_cov` (n*n row-major), `y_hat` (p), `y_var`
 * (p*p row-major), `u_hat` (m).
 *
 * # Safety
 * `smoother` must be a live smoother handle; non-null outputs must be
 * writable for the lengths stated above.
 */
enum CtsStatus cts_smoother_query(const struct CtsSmoother *smoother,
                                  double t,
                                  double *x_mean,
                                  double *x_cov,
                                  double *y_hat,
                                  double *y_var,
                                  double *u_hat);

/**
 * Releases a smoother handle. Null is accepted and ignored.
 *
 * # Safety
 * `smoother` must be null or a handle from [`cts_smoother_run`] that has
 * not been freed already.
 */
void cts_smoother_free(struct CtsSmoother *smoother);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
