#ifndef CRSFL_H
#define CRSFL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CrsflStatus {
  CRSFL_STATUS_OK = 0,
  CRSFL_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument such as a non-UTF-8 string or a length mismatch.
   */
  CRSFL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Rejected configuration, privacy request or sampler parameters.
   */
  CRSFL_STATUS_REFUSED = 3,
  /**
   * Failure while running: data I/O, divergence, CSV output.
   */
  CRSFL_STATUS_RUNTIME_FAILURE = 4,
  /**
   * The output buffer is too small; the required size was written.
   */
  CRSFL_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * The experiment has not been run yet.
   */
  CRSFL_STATUS_NOT_RUN = 6,
  CRSFL_STATUS_PANIC = 7,
} CrsflStatus;

/**
 * Compressor selector for [`crsfl_sampler_new`].
 */
typedef enum CrsflSamplerKind {
  CRSFL_SAMPLER_KIND_IDENTITY = 0,
  CRSFL_SAMPLER_KIND_CRS = 1,
  CRSFL_SAMPLER_KIND_MIN_MAX = 2,
  CRSFL_SAMPLER_KIND_G_SPAR = 3,
  CRSFL_SAMPLER_KIND_TOP_K = 4,
  CRSFL_SAMPLER_KIND_POISSON = 5,
} CrsflSamplerKind;

/**
 * A privacy certificate, issued or refused.
 */
typedef struct CrsflCertificate CrsflCertificate;

/**
 * A parsed experiment and, once run, its per-round metrics.
 */
typedef struct CrsflExperiment CrsflExperiment;

/**
 * A compressor with its own random stream and Top-K residual.
 */
typedef struct CrsflSampler CrsflSampler;

/**
 * One compressed update.
 */
typedef struct CrsflUpdate CrsflUpdate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL if none. Valid
 * until the next failing call on the same thread.
 */
const char *crsfl_last_error_message(void);

void crsfl_clear_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *crsfl_version(void);

/**
 * `p_max = 1 − e^{−ε}`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CrsflStatus crsfl_max_sampling_probability(double epsilon, double *out);

/**
 * Largest admissible `K` for `(ε, p, d)`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CrsflStatus crsfl_max_sampling_size(double epsilon, double p, size_t d, size_t *out);

/**
 * Check `(ε, p, K, d)` and build a certificate. A refused request still
 * yields a handle with `issued = false` and status `Ok`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CrsflStatus crsfl_certificate_issue(double epsilon,
                                         double p,
                                         size_t k,
                                         size_t d,
                                         struct CrsflCertificate **out);

/**
 * # Safety
 * `cert` must be a live handle or NULL.
 */
bool crsfl_certificate_is_issued(const struct CrsflCertificate *cert);

/**
 * δ bound and its natural log.
 *
 * # Safety
 * `cert` must be a live handle; the out-pointers may be NULL.
 */
enum CrsflStatus crsfl_certificate_delta(const struct CrsflCertificate *cert,
                                         double *delta_out,
                                         double *log_delta_out);

/**
 * Refusal reason for a refused certificate, NULL when issued. The string
 * lives as long as the calling thread's last error message.
 *
 * # Safety
 * `cert` must be a live handle.
 */
const char *crsfl_certificate_refusal(const struct CrsflCertificate *cert);

/**
 * # Safety
 * `cert` must be a handle from [`crsfl_certificate_issue`] or NULL, freed once.
 */
void crsfl_certificate_free(struct CrsflCertificate *cert);

/**
 * Create a compressor for gradients of length `dim`. `epsilon` is required
 * for CRS and ignored otherwise; pass a non-positive value for none.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum CrsflStatus crsfl_sampler_new(enum CrsflSamplerKind kind,
                                   size_t k,
                                   double p,
                                   double epsilon,
                                   bool feedback,
                                   size_t dim,
                                   uint64_t seed,
                                   struct CrsflSampler **out);

/**
 * Compress `g[..len]`. Each call draws fresh randomness from the sampler's
 * stream.
 *
 * # Safety
 * `sampler` must be live, `g` valid for `len` reads, `out` valid for writes.
 */
enum CrsflStatus crsfl_sampler_compress(struct CrsflSampler *sampler,
                                        const double *g,
                                        size_t len,
                                        struct CrsflUpdate **out);

/**
 * # Safety
 * `sampler` must be a handle from [`crsfl_sampler_new`] or NULL, freed once.
 */
void crsfl_sampler_free(struct CrsflSampler *sampler);

/**
 * Number of transmitted coordinates; 0 for NULL.
 *
 * # Safety
 * `u` must be live or NULL.
 */
size_t crsfl_update_len(const struct CrsflUpdate *u);

/**
 * Dense dimension; 0 for NULL.
 *
 * # Safety
 * `u` must be live or NULL.
 */
size_t crsfl_update_dim(const struct CrsflUpdate *u);

/**
 * Encoded size in bytes.
 *
 * # Safety
 * `u` must be live or NULL.
 */
size_t crsfl_update_payload_bytes(const struct CrsflUpdate *u);

/**
 * Copy the indices into `out[..cap]`; `len_out` receives the count.
 *
 * # Safety
 * `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
 */
enum CrsflStatus crsfl_update_indices(const struct CrsflUpdate *u,
                                      uint32_t *out,
                                      size_t cap,
                                      size_t *len_out);

/**
 * Copy the values into `out[..cap]`; `len_out` receives the count.
 *
 * # Safety
 * `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
 */
enum CrsflStatus crsfl_update_values(const struct CrsflUpdate *u,
                                     double *out,
                                     size_t cap,
                                     size_t *len_out);

/**
 * Write the dense vector into `out[..cap]`; `len_out` receives the dimension.
 *
 * # Safety
 * `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
 */
enum CrsflStatus crsfl_update_densify(const struct CrsflUpdate *u,
                                      double *out,
                                      size_t cap,
                                      size_t *len_out);

/**
 * Encode to the wire format into `out[..cap]`; `len_out` receives the size.
 *
 * # Safety
 * `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
 */
enum CrsflStatus crsfl_update_encode(const struct CrsflUpdate *u,
                                     uint8_t *out,
                                     size_t cap,
                                     size_t *len_out);

/**
 * Decode a wire-format buffer.
 *
 * # Safety
 * `bytes` valid for `len` reads; `out` valid for writes.
 */
enum CrsflStatus crsfl_update_decode(const uint8_t *bytes, size_t len, struct CrsflUpdate **out);

/**
 * # Safety
 * `u` must be a handle from this library or NULL, freed once.
 */
void crsfl_update_free(struct CrsflUpdate *u);

/**
 * Parse a `key = value` config text.
 *
 * # Safety
 * `text` must be NUL-terminated; `out` valid for writes.
 */
enum CrsflStatus crsfl_experiment_new(const char *text, struct CrsflExperiment **out);

/**
 * Run the experiment with `threads` workers (0 for the default pool).
 *
 * # Safety
 * `exp` must be live.
 */
enum CrsflStatus crsfl_experiment_run(struct CrsflExperiment *exp, size_t threads);

/**
 * Final accuracy, overall transmission in bytes per client, and accuracy
 * per MiB of transmission. Any out-pointer may be NULL.
 *
 * # Safety
 * `exp` must be live; out-pointers NULL or valid.
 */
enum CrsflStatus crsfl_experiment_summary(const struct CrsflExperiment *exp,
                                          double *accuracy_out,
                                          double *ot_bytes_out,
                                          double *acc_per_ot_out);

/**
 * Number of completed rounds, 0 before the run.
 *
 * # Safety
 * `exp` must be live or NULL.
 */
size_t crsfl_experiment_rounds(const struct CrsflExperiment *exp);

/**
 * Write the per-round CSV to `path`.
 *
 * # Safety
 * `exp` must be live; `path` NUL-terminated.
 */
enum CrsflStatus crsfl_experiment_write_csv(const struct CrsflExperiment *exp, const char *path);

/**
 * # Safety
 * `exp` must be a handle from [`crsfl_experiment_new`] or NULL, freed once.
 */
void crsfl_experiment_free(struct CrsflExperiment *exp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRSFL_H */
