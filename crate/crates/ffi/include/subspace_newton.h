#ifndef SUBSPACE_NEWTON_H
#define SUBSPACE_NEWTON_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RSN_OK 0

#define RSN_ERR_NULL_POINTER 1

#define RSN_ERR_INVALID_ARGUMENT 2

#define RSN_ERR_IO 3

#define RSN_ERR_PARSE 4

#define RSN_ERR_NUMERIC 5

#define RSN_ERR_PANIC 6

#define RSN_LINK_LOGISTIC 0

#define RSN_LINK_SQUARED 1

#define RSN_METHOD_RSN 0

#define RSN_METHOD_RSN_LS 1

#define RSN_METHOD_NEWTON 2

#define RSN_METHOD_GD 3

#define RSN_METHOD_AGD 4

#define RSN_SKETCH_IDENTITY 0

#define RSN_SKETCH_BLOCK 1

#define RSN_SKETCH_UNIFORM 2

#define RSN_SKETCH_GAUSSIAN 3

#define RSN_SKETCH_WEIGHTED 4

/**
 * Opaque problem handle.
 */
typedef struct RsnProblem RsnProblem;

typedef struct RsnOptions {
  /**
   * One of the `RSN_METHOD_*` constants.
   */
  int32_t method;
  /**
   * One of the `RSN_SKETCH_*` constants.
   */
  int32_t sketch;
  /**
   * Columns per sketch for block and Gaussian sketches.
   */
  size_t sketch_size;
  /**
   * Nonzero for exact line search.
   */
  int32_t line_search;
  double tol;
  size_t max_iter;
  uint64_t seed;
} RsnOptions;

typedef struct RsnReport {
  size_t iterations;
  double f;
  double grad_norm;
  /**
   * 1 if the gradient tolerance was met.
   */
  int32_t converged;
} RsnReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *rsn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rsn_version(void);

/**
 * Loads a LIBSVM file, keeps the first `samples` samples (0 keeps all),
 * removes all-zero features and appends an intercept.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t rsn_problem_from_libsvm(const char *path,
                                size_t samples,
                                int32_t link,
                                double lambda,
                                struct RsnProblem **out);

/**
 * Builds a problem from a `rows x cols` column-compressed matrix with one
 * column per sample. No preprocessing is applied.
 *
 * # Safety
 * `col_ptr` must hold `cols + 1` entries, `row_idx` and `values` must hold
 * `col_ptr[cols]` entries, `targets` must hold `cols` entries and `out` must
 * be a valid pointer.
 */
int32_t rsn_problem_from_csc(size_t rows,
                             size_t cols,
                             const size_t *col_ptr,
                             const size_t *row_idx,
                             const double *values,
                             const double *targets,
                             int32_t link,
                             double lambda,
                             struct RsnProblem **out);

/**
 * Releases a problem. NULL is ignored.
 *
 * # Safety
 * `problem` must come from one of the constructors and not be freed twice.
 */
void rsn_problem_free(struct RsnProblem *problem);

/**
 * Number of features after preprocessing, or 0 for NULL.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t rsn_problem_dim(const struct RsnProblem *problem);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t rsn_problem_samples(const struct RsnProblem *problem);

/**
 * Objective value at `x` (length `len`, equal to the problem dimension).
 *
 * # Safety
 * `x` must hold `len` values and `out` must be a valid pointer.
 */
int32_t rsn_value(const struct RsnProblem *problem, const double *x, size_t len, double *out);

/**
 * Gradient at `x`, written to `out` (both of length `len`).
 *
 * # Safety
 * `x` and `out` must each hold `len` values.
 */
int32_t rsn_gradient(const struct RsnProblem *problem, const double *x, size_t len, double *out);

/**
 * Defaults: RSN with single-coordinate blocks, fixed relative step,
 * `tol = 1e-6`, `max_iter = 1000`, seed 0.
 */
struct RsnOptions rsn_options_default(void);

/**
 * Minimizes from the point in `x` (length `len`), overwriting it with the
 * final iterate. `report` may be NULL. Returns `RSN_OK` both when the
 * tolerance is met and when the iteration budget runs out; check
 * `report->converged`.
 *
 * # Safety
 * `x` must hold `len` values; `options` must be valid; `report` must be NULL
 * or valid.
 */
int32_t rsn_solve(const struct RsnProblem *problem,
                  const struct RsnOptions *options,
                  double *x,
                  size_t len,
                  struct RsnReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBSPACE_NEWTON_H */
