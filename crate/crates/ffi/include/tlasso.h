#ifndef TLASSO_H
#define TLASSO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_ARGUMENT = 2,
  TL_STATUS_INSUFFICIENT_DATA = 3,
  TL_STATUS_DATA_ERROR = 4,
  TL_STATUS_SINGULAR = 5,
  TL_STATUS_NON_STATIONARY = 6,
  TL_STATUS_NUMERICAL = 7,
  TL_STATUS_BUFFER_TOO_SMALL = 8,
  TL_STATUS_PANIC = 9,
} TlStatus;

typedef enum TlEstimator {
  TL_ESTIMATOR_LEAST_SQUARES = 0,
  TL_ESTIMATOR_GAUSSIAN_LASSO = 1,
  TL_ESTIMATOR_TLASSO_FIXED = 2,
  TL_ESTIMATOR_TLASSO_ESTIMATED = 3,
} TlEstimator;

/**
 * Opaque fitted VAR.
 */
typedef struct TlFit TlFit;

/**
 * Opaque spillover table.
 */
typedef struct TlSpillover TlSpillover;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tl_last_error_message(void);

void tl_clear_last_error(void);

/**
 * Fits a VAR of the given order to a `rows`×`cols` row-major series,
 * oldest observation first. `dof` is used only by `TlassoFixed`. On success
 * `*out` owns a handle to be released with [`tl_fit_free`].
 *
 * # Safety
 * `series` must point to `rows * cols` doubles and `out` to a writable
 * pointer.
 */
enum TlStatus tl_fit_var(const double *series,
                         size_t rows,
                         size_t cols,
                         size_t order,
                         enum TlEstimator estimator,
                         double dof,
                         struct TlFit **out);

/**
 * Releases a fit handle. Null is ignored.
 *
 * # Safety
 * `fit` must come from [`tl_fit_var`] and not be used afterwards.
 */
void tl_fit_free(struct TlFit *fit);

/**
 * Number of series J, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t tl_fit_dim(const struct TlFit *fit);

/**
 * Lag order P, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t tl_fit_order(const struct TlFit *fit);

/**
 * Stacked (J·P)×J coefficients, row-major.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `capacity` doubles.
 */
enum TlStatus tl_fit_coefficients(const struct TlFit *fit, double *out, size_t capacity);

/**
 * J×J precision matrix of the innovation scale, row-major.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `capacity` doubles.
 */
enum TlStatus tl_fit_precision(const struct TlFit *fit, double *out, size_t capacity);

/**
 * Degrees of freedom, selected λ and γ. Entries that do not apply to the
 * estimator are set to NaN. Any output pointer may be null.
 *
 * # Safety
 * `fit` must be a live handle; non-null outputs must be writable.
 */
enum TlStatus tl_fit_parameters(const struct TlFit *fit,
                                double *dof,
                                double *lambda,
                                double *gamma);

/**
 * Generalized variance decomposition at `horizon` steps.
 *
 * # Safety
 * `fit` must be a live handle and `out` a writable pointer.
 */
enum TlStatus tl_spillover_new(const struct TlFit *fit, size_t horizon, struct TlSpillover **out);

/**
 * Releases a spillover handle. Null is ignored.
 *
 * # Safety
 * `spill` must come from [`tl_spillover_new`] and not be used afterwards.
 */
void tl_spillover_free(struct TlSpillover *spill);

/**
 * Total spillover index in percent, or NaN for a null handle.
 *
 * # Safety
 * `spill` must be null or a live handle.
 */
double tl_spillover_index(const struct TlSpillover *spill);

/**
 * True when the fitted model behind the table is not stationary.
 *
 * # Safety
 * `spill` must be null or a live handle.
 */
bool tl_spillover_non_stationary(const struct TlSpillover *spill);

/**
 * J×J spillovers in percent; row = receiver, column = source.
 *
 * # Safety
 * `spill` must be a live handle and `out` must hold `capacity` doubles.
 */
enum TlStatus tl_spillover_table(const struct TlSpillover *spill, double *out, size_t capacity);

/**
 * Parkinson variance of one bar.
 *
 * # Safety
 * `out` must be writable.
 */
enum TlStatus tl_parkinson_variance(double open, double high, double low, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLASSO_H */
