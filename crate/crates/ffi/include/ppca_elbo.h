#ifndef PPCA_ELBO_H
#define PPCA_ELBO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PpcaStatus {
  PPCA_STATUS_OK = 0,
  PPCA_STATUS_NULL_POINTER = 1,
  PPCA_STATUS_INVALID_ARGUMENT = 2,
  PPCA_STATUS_DIMENSION_MISMATCH = 3,
  PPCA_STATUS_NOT_POSITIVE_DEFINITE = 4,
  PPCA_STATUS_NOT_SYMMETRIC = 5,
  PPCA_STATUS_NUMERICAL_FAILURE = 6,
  PPCA_STATUS_PARSE = 7,
  PPCA_STATUS_IO = 8,
  PPCA_STATUS_PANIC = 9,
} PpcaStatus;

/**
 * Opaque `n × d` dataset.
 */
typedef struct PpcaDataset PpcaDataset;

/**
 * Opaque outcome of rank selection.
 */
typedef struct PpcaSelectionReport PpcaSelectionReport;

/**
 * Settings for [`ppca_select`]; start from [`ppca_select_config_default`].
 */
typedef struct PpcaSelectConfig {
  size_t k_max;
  double prior_var;
  double noise_var;
  double alpha;
  uint64_t seed;
  size_t mc_samples;
  double step_size;
  size_t iterations;
  size_t restarts;
} PpcaSelectConfig;

/**
 * One scored candidate rank.
 */
typedef struct PpcaRankEntry {
  size_t k;
  double elbo;
  double elbo_se;
  double penalty;
  double score;
} PpcaRankEntry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *ppca_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ppca_version(void);

/**
 * Copies `n × d` row-major observations into a new dataset.
 *
 * # Safety
 * `rows` must point to `n * d` doubles; `out` must be writable.
 */
enum PpcaStatus ppca_dataset_from_rows(const double *rows,
                                       size_t n,
                                       size_t d,
                                       struct PpcaDataset **out);

/**
 * Samples `n` observations from PPCA with `d × k` row-major loadings `w`.
 *
 * # Safety
 * `w` must point to `d * k` doubles; `out` must be writable.
 */
enum PpcaStatus ppca_dataset_generate(const double *w,
                                      size_t d,
                                      size_t k,
                                      double noise_var,
                                      size_t n,
                                      uint64_t seed,
                                      struct PpcaDataset **out);

/**
 * # Safety
 * `ds` must be a live handle or null (returns 0).
 */
size_t ppca_dataset_n(const struct PpcaDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle or null (returns 0).
 */
size_t ppca_dataset_d(const struct PpcaDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void ppca_dataset_free(struct PpcaDataset *ds);

/**
 * Gaussian log-likelihood of the dataset under PPCA with loadings `w` (`d × k`, row-major).
 *
 * # Safety
 * `ds` must be live; `w` must point to `d * k` doubles with `d` equal to the dataset's.
 */
enum PpcaStatus ppca_log_likelihood(const struct PpcaDataset *ds,
                                    const double *w,
                                    size_t k,
                                    double noise_var,
                                    double *out);

/**
 * `KL(N(0, sigma0) ‖ N(0, sigma))` for `d × d` row-major SPD matrices.
 *
 * # Safety
 * Both matrices must point to `d * d` doubles.
 */
enum PpcaStatus ppca_kl_gaussian(const double *sigma0, const double *sigma, size_t d, double *out);

/**
 * Rényi divergence of order `alpha` in (0, 1) between `N(0, sigma_p)` and `N(0, sigma_r)`.
 *
 * # Safety
 * Both matrices must point to `d * d` doubles.
 */
enum PpcaStatus ppca_renyi_gaussian(double alpha_,
                                    const double *sigma_p,
                                    const double *sigma_r,
                                    size_t d,
                                    double *out);

/**
 * Tempered posterior `∝ prior · exp(alpha · loglik)` on a finite grid, written to `out_mass`.
 *
 * # Safety
 * All three buffers must hold `len` doubles.
 */
enum PpcaStatus ppca_tempered_posterior(const double *prior_mass,
                                        const double *loglik,
                                        size_t len,
                                        double alpha_,
                                        double *out_mass);

/**
 * `log Σ prior · exp(alpha · loglik)`.
 *
 * # Safety
 * `prior_mass` and `loglik` must hold `len` doubles.
 */
enum PpcaStatus ppca_log_tempered_evidence(const double *prior_mass,
                                           const double *loglik,
                                           size_t len,
                                           double alpha_,
                                           double *out);

struct PpcaSelectConfig ppca_select_config_default(void);

/**
 * Penalized-ELBO selection over ranks `1..=k_max` with a uniform model prior.
 *
 * # Safety
 * `ds` must be live; `cfg` and `out` must be valid pointers.
 */
enum PpcaStatus ppca_select(const struct PpcaDataset *ds,
                            const struct PpcaSelectConfig *cfg,
                            struct PpcaSelectionReport **out);

/**
 * # Safety
 * `r` must be a live handle or null (returns 0).
 */
size_t ppca_report_selected_k(const struct PpcaSelectionReport *r);

/**
 * Number of successfully scored ranks.
 *
 * # Safety
 * `r` must be a live handle or null (returns 0).
 */
size_t ppca_report_len(const struct PpcaSelectionReport *r);

/**
 * # Safety
 * `r` must be live and `out` writable.
 */
enum PpcaStatus ppca_report_entry(const struct PpcaSelectionReport *r,
                                  size_t index,
                                  struct PpcaRankEntry *out);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void ppca_report_free(struct PpcaSelectionReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPCA_ELBO_H */
