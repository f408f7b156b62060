#ifndef PINLAB_H
#define PINLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum PinlabStatus {
  PINLAB_STATUS_OK = 0,
  PINLAB_STATUS_NULL_POINTER = 1,
  PINLAB_STATUS_INVALID_PARAMETER = 2,
  PINLAB_STATUS_INDEX_OUT_OF_RANGE = 3,
  PINLAB_STATUS_NOT_NORMALIZED = 4,
  PINLAB_STATUS_INCONSISTENT_CONSTRAINTS = 5,
  PINLAB_STATUS_NO_CONVERGENCE = 6,
  PINLAB_STATUS_BRACKETING = 7,
  PINLAB_STATUS_TABLE_LIMIT = 8,
  PINLAB_STATUS_TOO_FEW_SAMPLES = 9,
  PINLAB_STATUS_NUMERIC = 10,
  PINLAB_STATUS_CONFIG = 11,
  PINLAB_STATUS_CACHE = 12,
  PINLAB_STATUS_IO = 13,
  PINLAB_STATUS_JSON = 14,
  PINLAB_STATUS_BUFFER_TOO_SMALL = 15,
  PINLAB_STATUS_UTF8 = 16,
  PINLAB_STATUS_PANIC = 17,
} PinlabStatus;

// Pinning kernel, its hit tables and the step potential.
typedef struct PinlabKernel PinlabKernel;

// Finished experiment: criteria, CSV and summary.
typedef struct PinlabReport PinlabReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success.
// Valid until the next pinlab call on the same thread.
const char *pinlab_last_error(void);

// Library version as a static NUL-terminated string.
const char *pinlab_version(void);

// Critical pinning strength for Gaussian steps of standard deviation `sigma`
// on a grid of `grid_m` nodes with jumps up to `nmax`.
//
// # Safety
// `out` must be valid for a write.
enum PinlabStatus pinlab_critical_epsilon(double sigma, size_t grid_m, size_t nmax, double *out);

// Builds the kernel at `eps_rel · ε_c` with tables up to `horizon`.
// `cache_dir` may be null.
//
// # Safety
// `out` must be valid for a write; `cache_dir` must be null or a NUL-terminated string.
enum PinlabStatus pinlab_kernel_new(double sigma,
                                    double eps_rel,
                                    size_t grid_m,
                                    size_t nmax,
                                    size_t horizon,
                                    const char *cache_dir,
                                    struct PinlabKernel **out);

// # Safety
// `k` must be null or a handle from [`pinlab_kernel_new`] not freed before.
void pinlab_kernel_free(struct PinlabKernel *k);

// Pinning strength, critical strength and free energy of the kernel.
// Any output pointer may be null.
//
// # Safety
// `k` must be a live handle; non-null outputs must be valid for a write.
enum PinlabStatus pinlab_kernel_info(const struct PinlabKernel *k,
                                     double *eps,
                                     double *eps_c,
                                     double *free_energy);

// Probability that the infinite-volume chain has adjacent contacts at `N` and `N+1`.
//
// # Safety
// `k` must be a live handle and `out` valid for a write.
enum PinlabStatus pinlab_kernel_partition(const struct PinlabKernel *k, size_t n, double *out);

// Samples replica `index` of the pinned field on `[0, N]` and writes
// `φ_0, …, φ_N` to `values` (length at least `N + 1`). `contacts`, if not
// null, receives the number of contacts in `[1, N]`.
//
// # Safety
// `k` must be a live handle; `values` must be valid for `len` writes.
enum PinlabStatus pinlab_sample_path(const struct PinlabKernel *k,
                                     size_t n,
                                     uint64_t seed,
                                     uint64_t index,
                                     double *values,
                                     size_t len,
                                     size_t *contacts);

// Runs the experiment described by a JSON configuration without writing
// files. `threads` of 0 uses all cores.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` valid for a write.
enum PinlabStatus pinlab_run(const char *config_json, size_t threads, struct PinlabReport **out);

// # Safety
// `r` must be null or a handle from [`pinlab_run`] not freed before.
void pinlab_report_free(struct PinlabReport *r);

// Number of criteria; 0 for a null handle.
//
// # Safety
// `r` must be null or a live handle.
size_t pinlab_report_criteria(const struct PinlabReport *r);

// Criterion `i`: name (owned by the report), measured value and verdict.
// Any output pointer may be null.
//
// # Safety
// `r` must be a live handle; non-null outputs must be valid for a write.
enum PinlabStatus pinlab_report_criterion(const struct PinlabReport *r,
                                          size_t i,
                                          const char **name,
                                          double *value,
                                          bool *pass);

// Whether every criterion passed; false for a null handle.
//
// # Safety
// `r` must be null or a live handle.
bool pinlab_report_passed(const struct PinlabReport *r);

// `results.csv` contents, owned by the report; null for a null handle.
//
// # Safety
// `r` must be null or a live handle.
const char *pinlab_report_csv(const struct PinlabReport *r);

// Compact `summary.json`, owned by the report; null for a null handle.
//
// # Safety
// `r` must be null or a live handle.
const char *pinlab_report_summary(const struct PinlabReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PINLAB_H */
