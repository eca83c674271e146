#ifndef REMOVABILITY_H
#define REMOVABILITY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RmStatus {
  RM_STATUS_OK = 0,
  RM_STATUS_NULL_POINTER = 1,
  RM_STATUS_DOMAIN = 2,
  RM_STATUS_RANGE = 3,
  RM_STATUS_INFEASIBLE = 4,
  RM_STATUS_CAP_EXCEEDED = 5,
  RM_STATUS_MISMATCH = 6,
  RM_STATUS_FORMAT = 7,
  RM_STATUS_IO = 8,
  RM_STATUS_NUMERIC = 9,
  RM_STATUS_BUFFER_TOO_SMALL = 10,
  RM_STATUS_PANIC = 11,
} RmStatus;

typedef enum RmVerdict {
  RM_VERDICT_CONVERGES = 0,
  RM_VERDICT_DIVERGES = 1,
  RM_VERDICT_INCONCLUSIVE = 2,
} RmVerdict;

/**
 * Opaque construction parameters.
 */
typedef struct RmParams RmParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parameters for M = 2^a, N = 2^b with p = 2 and the largest exponent the
 * pair supports.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum RmStatus rm_params_new(uint32_t a, uint32_t b, size_t max_depth, struct RmParams **out);

/**
 * Smallest feasible (a, b) for `alpha` and `p`, given as decimal or
 * `num/den` strings.
 *
 * # Safety
 * `alpha` and `p` must be NUL-terminated strings; `out` must be valid for
 * writes.
 */
enum RmStatus rm_solve(const char *alpha,
                       const char *p,
                       uint32_t bound,
                       size_t max_depth,
                       struct RmParams **out);

/**
 * # Safety
 * `handle` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void rm_params_free(struct RmParams *handle);

/**
 * # Safety
 * `handle` must be a live handle; `a` and `b` must be valid for writes.
 */
enum RmStatus rm_params_exponents(const struct RmParams *handle, uint32_t *a, uint32_t *b);

/**
 * uₙ(x, y) for `f64` inputs, each read as the exact rational it encodes.
 *
 * # Safety
 * `handle` must be a live handle; `out` must be valid for writes.
 */
enum RmStatus rm_u_eval(const struct RmParams *handle, size_t n, double x, double y, double *out);

/**
 * Exact uₙ(x, y): rational string inputs, `num/den` output written into
 * `buf`. On `BufferTooSmall`, `needed` holds the required size.
 *
 * # Safety
 * `handle` must be a live handle; `x` and `y` NUL-terminated strings; `buf`
 * valid for `len` bytes; `needed` null or valid for writes.
 */
enum RmStatus rm_u_eval_exact(const struct RmParams *handle,
                              size_t n,
                              const char *x,
                              const char *y,
                              char *buf,
                              size_t len,
                              size_t *needed);

/**
 * Integral test for h(t) = c·t^alpha. `value` receives the integral when it
 * converges and NaN otherwise.
 *
 * # Safety
 * `verdict` and `value` must be valid for writes.
 */
enum RmStatus rm_integral_test(double c,
                               double alpha,
                               double p,
                               enum RmVerdict *verdict,
                               double *value);

/**
 * Size in bytes, including the NUL, of the calling thread's last error
 * message; 1 when the last call succeeded.
 */
size_t rm_last_error_length(void);

/**
 * Copies the calling thread's last error message into `buf`. Returns the
 * number of bytes written including the NUL, or 0 if `buf` is null or too
 * small.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t rm_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REMOVABILITY_H */
