#ifndef ACTOR_ANCHOR_H
#define ACTOR_ANCHOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AaStatus {
  AA_STATUS_OK = 0,
  AA_STATUS_NULL_POINTER = 1,
  AA_STATUS_INVALID_ARGUMENT = 2,
  AA_STATUS_DIMENSION_MISMATCH = 3,
  AA_STATUS_EMPTY_SUPPORT = 4,
  AA_STATUS_BUFFER_TOO_SMALL = 5,
  AA_STATUS_INTERNAL = 6,
} AaStatus;

/**
 * Opaque diagonal Gaussian.
 */
typedef struct AaGaussian AaGaussian;

/**
 * Agreement between PoE(alpha) and KL-Reg(alpha / (1 - alpha)).
 */
typedef struct AaEquivalence {
  double alpha;
  double beta;
  double max_mean_abs_diff;
  double variance_identity_residual;
} AaEquivalence;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *aa_version(void);

/**
 * Copies the last error message of this thread into `buf`, NUL-terminated and
 * truncated to `len - 1` bytes. Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t aa_last_error_message(char *buf, size_t len);

/**
 * Creates a Gaussian from `dim` means and positive variances.
 *
 * # Safety
 * `mean` and `var` must be valid for `dim` reads; `out` must be writable.
 */
enum AaStatus aa_gaussian_new(const double *mean,
                              const double *var,
                              size_t dim,
                              struct AaGaussian **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `g` must be null or a handle returned by this library and not yet freed.
 */
void aa_gaussian_free(struct AaGaussian *g);

/**
 * Dimension of `g`, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
size_t aa_gaussian_dim(const struct AaGaussian *g);

/**
 * Copies the mean of `g` into `out`, which holds `len` values.
 *
 * # Safety
 * `g` must be a live handle; `out` must be valid for `len` writes.
 */
enum AaStatus aa_gaussian_mean(const struct AaGaussian *g, double *out, size_t len);

/**
 * Copies the variances of `g` into `out`, which holds `len` values.
 *
 * # Safety
 * `g` must be a live handle; `out` must be valid for `len` writes.
 */
enum AaStatus aa_gaussian_var(const struct AaGaussian *g, double *out, size_t len);

/**
 * Product-of-experts refinement with actor weight `alpha` in [0, 1].
 *
 * # Safety
 * `actor` and `prior` must be live handles; `out` must be writable.
 */
enum AaStatus aa_poe_compose(const struct AaGaussian *actor,
                             const struct AaGaussian *prior,
                             double alpha,
                             struct AaGaussian **out);

/**
 * KL-regularized update with trust weight `beta > 0`.
 *
 * # Safety
 * `actor` and `prior` must be live handles; `out` must be writable.
 */
enum AaStatus aa_klreg_compose(const struct AaGaussian *actor,
                               const struct AaGaussian *prior,
                               double beta,
                               struct AaGaussian **out);

/**
 * Additive mix with prior weight `lambda` in [0, 1].
 *
 * # Safety
 * `actor` and `prior` must be live handles; `out` must be writable.
 */
enum AaStatus aa_additive_mix(const struct AaGaussian *actor,
                              const struct AaGaussian *prior,
                              double lambda,
                              struct AaGaussian **out);

/**
 * `KL(p || q)` in nats.
 *
 * # Safety
 * `p` and `q` must be live handles; `out` must be writable.
 */
enum AaStatus aa_gaussian_kl(const struct AaGaussian *p, const struct AaGaussian *q, double *out);

/**
 * 2-Wasserstein distance.
 *
 * # Safety
 * `p` and `q` must be live handles; `out` must be writable.
 */
enum AaStatus aa_gaussian_w2(const struct AaGaussian *p, const struct AaGaussian *q, double *out);

/**
 * Compares PoE(alpha) with KL-Reg(alpha / (1 - alpha)) for one actor/prior pair.
 *
 * # Safety
 * `actor` and `prior` must be live handles; `out` must be writable.
 */
enum AaStatus aa_equivalence_audit(const struct AaGaussian *actor,
                                   const struct AaGaussian *prior,
                                   double alpha,
                                   struct AaEquivalence *out);

/**
 * `alpha / (1 - alpha)` for `alpha` in (0, 1).
 *
 * # Safety
 * `out` must be writable.
 */
enum AaStatus aa_alpha_to_beta(double alpha, double *out);

/**
 * `beta / (1 + beta)` for `beta > 0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AaStatus aa_beta_to_alpha(double beta, double *out);

/**
 * `min(1, sqrt(kl / 2))`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AaStatus aa_pinsker_tv_bound(double kl, double *out);

/**
 * `2 gamma / (1 - gamma)^2`.
 */
double aa_cpi_penalty_coeff(double gamma);

/**
 * Finite-action product of experts over `n` actions, written to `out`.
 *
 * # Safety
 * `actor`, `prior` and `out` must each be valid for `n` values.
 */
enum AaStatus aa_poe_finite(const double *actor,
                            const double *prior,
                            size_t n,
                            double alpha,
                            double *out);

/**
 * `KL(p || q)` between two distributions over `n` actions.
 *
 * # Safety
 * `p` and `q` must be valid for `n` values; `out` must be writable.
 */
enum AaStatus aa_finite_kl(const double *p, const double *q, size_t n, double *out);

/**
 * Total-variation distance between two distributions over `n` actions.
 *
 * # Safety
 * `p` and `q` must be valid for `n` values; `out` must be writable.
 */
enum AaStatus aa_tv_distance(const double *p, const double *q, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTOR_ANCHOR_H */
