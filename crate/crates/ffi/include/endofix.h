#ifndef ENDOFIX_H
#define ENDOFIX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EfStatus {
  EF_STATUS_OK = 0,
  EF_STATUS_NULL_POINTER = 1,
  EF_STATUS_INVALID_ARGUMENT = 2,
  EF_STATUS_DATA = 3,
  /**
   * Collinear design, constant input or a Gaussian first stage.
   */
  EF_STATUS_IDENTIFICATION = 4,
  EF_STATUS_NUMERIC = 5,
  EF_STATUS_IO = 6,
  /**
   * The requested quantity is not attached to the handle.
   */
  EF_STATUS_NOT_AVAILABLE = 7,
  EF_STATUS_PANIC = 8,
} EfStatus;

typedef enum EfEstimator {
  EF_ESTIMATOR_OLS = 0,
  EF_ESTIMATOR_NPCF = 1,
  EF_ESTIMATOR_IV_INTERNAL = 2,
  EF_ESTIMATOR_TWO_SCOPE = 3,
  EF_ESTIMATOR_GP_COPULA = 4,
} EfEstimator;

/**
 * Opaque dataset handle.
 */
typedef struct EfDataset EfDataset;

/**
 * Opaque fitted-estimate handle.
 */
typedef struct EfEstimate EfEstimate;

/**
 * Constants of the asymptotic covariance for one error distribution.
 */
typedef struct EfConstants {
  double c1;
  double c2;
  double c3;
  double variance;
  double bridge_residual;
  double singularity_margin;
} EfConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ef_version(void);

/**
 * Message of the most recent failure on this thread (empty if none). The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ef_last_error(void);

/**
 * Builds a dataset from `ncols` named columns of `nrows` values each;
 * `columns[j]` points at the values of column `names[j]`. The data are copied.
 *
 * # Safety
 * `names` and `columns` must point at `ncols` valid pointers, each column
 * at `nrows` readable doubles; `out` must be writable.
 */
enum EfStatus ef_dataset_new(const char *const *names,
                             const double *const *columns,
                             size_t ncols,
                             size_t nrows,
                             struct EfDataset **out);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `ds` must come from `ef_dataset_new` and not be used afterwards.
 */
void ef_dataset_free(struct EfDataset *ds);

/**
 * Number of rows of a dataset (0 for null).
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t ef_dataset_nrows(const struct EfDataset *ds);

/**
 * Fits `estimator` to `outcome ~ exog | endog`. The estimate carries the
 * estimator's default covariance (classical for the regression-based
 * estimators, none for the likelihood comparator).
 *
 * # Safety
 * All pointers must be valid for the given lengths; `out` must be writable.
 */
enum EfStatus ef_fit(const struct EfDataset *ds,
                     const char *outcome,
                     const char *const *exog,
                     size_t n_exog,
                     const char *const *endog,
                     size_t n_endog,
                     enum EfEstimator estimator,
                     struct EfEstimate **out);

/**
 * Releases an estimate; null is ignored.
 *
 * # Safety
 * `est` must come from `ef_fit` and not be used afterwards.
 */
void ef_estimate_free(struct EfEstimate *est);

/**
 * Number of coefficients (0 for null). Order: intercept and exogenous
 * slopes, endogenous slopes, then one correction per endogenous regressor.
 *
 * # Safety
 * `est` must be null or a live estimate handle.
 */
size_t ef_estimate_len(const struct EfEstimate *est);

/**
 * Name of coefficient `j`, owned by the estimate; null when out of range.
 *
 * # Safety
 * `est` must be null or a live estimate handle.
 */
const char *ef_estimate_name(const struct EfEstimate *est, size_t j);

/**
 * Copies the coefficient vector into `buf` (at least `ef_estimate_len` doubles).
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum EfStatus ef_estimate_theta(const struct EfEstimate *est, double *buf, size_t len);

/**
 * Copies the standard errors into `buf`; `EF_STATUS_NOT_AVAILABLE` when the
 * estimate carries no covariance.
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum EfStatus ef_estimate_se(const struct EfEstimate *est, double *buf, size_t len);

/**
 * Replaces the estimate's covariance with a pairs bootstrap of `b`
 * resamples drawn from `seed`, refitting on the rows of `ds`.
 *
 * # Safety
 * `est` must be a live estimate fitted on `ds`.
 */
enum EfStatus ef_estimate_bootstrap(struct EfEstimate *est,
                                    const struct EfDataset *ds,
                                    size_t b,
                                    uint64_t seed);

/**
 * t-test of a zero control-function coefficient (one endogenous regressor).
 *
 * # Safety
 * Pointers must be valid; `statistic` and `p_value` writable.
 */
enum EfStatus ef_exogeneity_test(const struct EfDataset *ds,
                                 const char *outcome,
                                 const char *const *exog,
                                 size_t n_exog,
                                 const char *endog,
                                 double *statistic,
                                 double *p_value);

/**
 * Normal scores Φ⁻¹(rank/(n+1)) of `n` values, ties sharing their average rank.
 *
 * # Safety
 * `values` readable and `out` writable for `n` doubles.
 */
enum EfStatus ef_normal_scores(const double *values, size_t n, double *out);

/**
 * Constants for the standard normal (`shape <= 0`) or the mean-zero
 * Γ(shape, rate) first-stage error.
 *
 * # Safety
 * `out` must be writable.
 */
enum EfStatus ef_constants(double shape, double rate, struct EfConstants *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENDOFIX_H */
