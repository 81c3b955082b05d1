#ifndef DUPSISTA_H
#define DUPSISTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum DsMseMode {
  DS_MSE_MODE_PER_ELEMENT = 0,
  DS_MSE_MODE_TOTAL = 1,
} DsMseMode;

typedef enum DsSketchKind {
  DS_SKETCH_KIND_GAUSSIAN = 0,
  DS_SKETCH_KIND_COUNT = 1,
} DsSketchKind;

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_DIMENSION_MISMATCH = 3,
  DS_STATUS_MISSING_SKETCH = 4,
  DS_STATUS_DIVERGED = 5,
  DS_STATUS_IO = 6,
  DS_STATUS_CONFIG = 7,
  DS_STATUS_BUFFER_TOO_SMALL = 8,
  DS_STATUS_PANIC = 9,
} DsStatus;

typedef enum DsVariantKind {
  DS_VARIANT_KIND_ISTA = 0,
  DS_VARIANT_KIND_SKETCHED_ISTA = 1,
  DS_VARIANT_KIND_PSISTA = 2,
} DsVariantKind;

// A measurement problem `y = A x⋆ + w`.
typedef struct DsProblem DsProblem;

// Per-iteration step sizes and thresholds.
typedef struct DsSchedule DsSchedule;

// Precomputed `SA` and `Sy` for one problem.
typedef struct DsSketched DsSketched;

// Operation counts for one `(n, m, l, P, T)`.
typedef struct DsComplexity {
  uint64_t o_ista;
  uint64_t o_sketch;
  uint64_t n_ista;
  uint64_t n_sketch;
  uint64_t c_psista;
  uint64_t c_ista;
  // Percentage of the dense total in tenths, rounded half-up.
  uint64_t percent_tenths;
} DsComplexity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
//
// The pointer stays valid until the next `ds_*` call on the same thread.
const char *ds_last_error(void);

// Library version as a static NUL-terminated string.
const char *ds_version(void);

// Draws `A` (N(0,1) entries), a Bernoulli–Gaussian `x⋆` and noise of variance `sigma2`.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum DsStatus ds_problem_generate(uint64_t seed,
                                  size_t m,
                                  size_t n,
                                  double sigma2,
                                  double p_nonzero,
                                  struct DsProblem **out);

// Builds a problem from `a` (`m*n`, row-major), `x_star` (`n`) and `noise` (`m`).
//
// # Safety
// Arrays must hold the stated number of elements; `out` must be valid.
enum DsStatus ds_problem_from_arrays(const double *a,
                                     size_t m,
                                     size_t n,
                                     const double *x_star,
                                     const double *noise,
                                     double sigma2,
                                     struct DsProblem **out);

// # Safety
// `problem` must be a live handle; `m` and `n` valid pointers.
enum DsStatus ds_problem_dims(const struct DsProblem *problem, size_t *m, size_t *n);

// Copies `x⋆` into `buf` (capacity `len`).
//
// # Safety
// `problem` must be live; `buf` must hold `len` doubles.
enum DsStatus ds_problem_x_star(const struct DsProblem *problem, double *buf, size_t len);

// # Safety
// `problem` must come from this library and not be freed twice. Null is ignored.
void ds_problem_free(struct DsProblem *problem);

// Draws an `l x m` sketch from `seed` and precomputes `SA`, `Sy` for `problem`.
//
// # Safety
// `problem` must be live; `out` must be valid.
enum DsStatus ds_sketched_build(const struct DsProblem *problem,
                                enum DsSketchKind kind,
                                size_t l,
                                uint64_t seed,
                                struct DsSketched **out);

// # Safety
// As for [`ds_problem_free`].
void ds_sketched_free(struct DsSketched *sketched);

// `η_t = λ_t = 1/λ_max(AᵀA)` for `t = 1..T`.
//
// # Safety
// `problem` must be live; `out` must be valid.
enum DsStatus ds_schedule_default(const struct DsProblem *problem,
                                  size_t t,
                                  struct DsSchedule **out);

// # Safety
// `etas` and `lambdas` must hold `t` doubles; `out` must be valid.
enum DsStatus ds_schedule_from_arrays(const double *etas,
                                      const double *lambdas,
                                      size_t t,
                                      struct DsSchedule **out);

// Reads the schedule from a parameter file written by `dupsista train`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be valid.
enum DsStatus ds_schedule_load(const char *path, struct DsSchedule **out);

// Number of iterations `T`; 0 for a null handle.
//
// # Safety
// `schedule` must be live or null.
size_t ds_schedule_len(const struct DsSchedule *schedule);

// Copies step sizes and thresholds into buffers of capacity `len`.
//
// # Safety
// `schedule` must be live; each buffer must hold `len` doubles.
enum DsStatus ds_schedule_get(const struct DsSchedule *schedule,
                              double *etas,
                              double *lambdas,
                              size_t len);

// # Safety
// As for [`ds_problem_free`].
void ds_schedule_free(struct DsSchedule *schedule);

// Runs the solver and writes the final iterate `x^(T+1)` into `out` (capacity `out_len >= n`).
//
// `sketched` may be null for variants that never take a sketched step.
//
// # Safety
// Handles must be live (or null where allowed); `out` must hold `out_len` doubles.
enum DsStatus ds_run(enum DsVariantKind kind,
                     size_t period,
                     const struct DsProblem *problem,
                     const struct DsSketched *sketched,
                     const struct DsSchedule *schedule,
                     double *out,
                     size_t out_len);

// # Safety
// Both arrays must hold `len` doubles; `out` must be valid.
enum DsStatus ds_mse(const double *x_hat,
                     const double *x_star,
                     size_t len,
                     enum DsMseMode mode,
                     double *out);

// # Safety
// `out` must be valid.
enum DsStatus ds_total_complexity(uint64_t n,
                                  uint64_t m,
                                  uint64_t l,
                                  uint64_t period,
                                  uint64_t t,
                                  struct DsComplexity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUPSISTA_H */
