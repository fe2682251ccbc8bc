#ifndef CARDIOLAT_H
#define CARDIOLAT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum CardiolatStatus {
  CARDIOLAT_STATUS_OK = 0,
  CARDIOLAT_STATUS_NULL_ARGUMENT = 1,
  CARDIOLAT_STATUS_INVALID_UTF8 = 2,
  CARDIOLAT_STATUS_IO = 3,
  CARDIOLAT_STATUS_PARSE = 4,
  CARDIOLAT_STATUS_NUMERIC = 5,
  CARDIOLAT_STATUS_SOLVER = 6,
  CARDIOLAT_STATUS_INVALID = 7,
  CARDIOLAT_STATUS_PANIC = 8,
} CardiolatStatus;

/**
 * Opaque classifier handle.
 */
typedef struct CardiolatClassifier CardiolatClassifier;

/**
 * Opaque encoder handle: a trained latent ODE plus solver settings.
 */
typedef struct CardiolatEncoder CardiolatEncoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cardiolat_last_error(void);

/**
 * Loads a latent ODE checkpoint (JSON produced by the trainer).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum CardiolatStatus cardiolat_encoder_load(const char *path, struct CardiolatEncoder **out);

/**
 * Frees an encoder. NULL is accepted.
 *
 * # Safety
 * `handle` must be NULL or a pointer from `cardiolat_encoder_load`.
 */
void cardiolat_encoder_free(struct CardiolatEncoder *handle);

/**
 * Latent dimensionality of a loaded encoder (0 for NULL).
 *
 * # Safety
 * `handle` must be NULL or a valid encoder handle.
 */
uintptr_t cardiolat_encoder_latent_dim(const struct CardiolatEncoder *handle);

/**
 * Loads a GBDT classifier (JSON produced by the trainer).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum CardiolatStatus cardiolat_classifier_load(const char *path, struct CardiolatClassifier **out);

/**
 * Frees a classifier. NULL is accepted.
 *
 * # Safety
 * `handle` must be NULL or a pointer from `cardiolat_classifier_load`.
 */
void cardiolat_classifier_free(struct CardiolatClassifier *handle);

/**
 * Encodes one beat into a latent vector sample (deterministic in `seed`).
 * `z0_out` must hold `cardiolat_encoder_latent_dim` doubles.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum CardiolatStatus cardiolat_encode(const struct CardiolatEncoder *handle,
                                      const double *times,
                                      const double *values,
                                      uintptr_t len,
                                      uint64_t seed,
                                      double *z0_out,
                                      uintptr_t z0_len);

/**
 * Classifies one beat with an `n_votes` seed ensemble. On success writes
 * the winning class index (0..5 for N,S,V,F,Q) to `class_out` and, when
 * `probs_out` is non-NULL, the 5 ensemble-averaged class probabilities.
 *
 * # Safety
 * All pointers must be valid; `probs_out`, if non-NULL, must hold 5 doubles.
 */
enum CardiolatStatus cardiolat_predict(const struct CardiolatEncoder *encoder,
                                       const struct CardiolatClassifier *classifier,
                                       const double *times,
                                       const double *values,
                                       uintptr_t len,
                                       uintptr_t n_votes,
                                       uint64_t seed,
                                       uint32_t *class_out,
                                       double *probs_out);

/**
 * Single-character class symbol for an index from `cardiolat_predict`,
 * or NULL for an out-of-range index.
 */
const char *cardiolat_class_name(uint32_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARDIOLAT_H */
