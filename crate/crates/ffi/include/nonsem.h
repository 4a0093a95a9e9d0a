/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef NONSEM_H
#define NONSEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NsStatus {
  NS_STATUS_OK = 0,
  NS_STATUS_NULL_ARGUMENT = 1,
  NS_STATUS_INVALID_ARGUMENT = 2,
  NS_STATUS_IO = 3,
  NS_STATUS_FORMAT = 4,
  NS_STATUS_CONFIG = 5,
  NS_STATUS_NUMERIC = 6,
  NS_STATUS_UNDEFINED_METRIC = 7,
  NS_STATUS_PANIC = 8,
} NsStatus;

/**
 * Trained detector loaded from a checkpoint.
 */
typedef struct NsDetector NsDetector;

/**
 * One `d × t` embedding matrix.
 */
typedef struct NsEmbedding NsEmbedding;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *ns_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ns_version(void);

/**
 * Loads a `CKPT` checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NsStatus ns_detector_load(const char *path, struct NsDetector **out);

/**
 * # Safety
 * `detector` must be null or a handle from [`ns_detector_load`] not yet freed.
 */
void ns_detector_free(struct NsDetector *detector);

/**
 * Embedding dimension the detector expects.
 *
 * # Safety
 * `detector` must be a live handle; `out` must be writable.
 */
enum NsStatus ns_detector_input_dim(const struct NsDetector *detector, uintptr_t *out);

/**
 * Scores `n` utterances laid out as `[n][d][t]` floats (embedding
 * dimension major, then time). Writes `n` scores; higher is more bonafide.
 *
 * # Safety
 * `data` must hold `n * d * t` floats and `scores` room for `n` doubles.
 */
enum NsStatus ns_detector_score(const struct NsDetector *detector,
                                const float *data,
                                uintptr_t n,
                                uintptr_t d,
                                uintptr_t t,
                                double *scores);

/**
 * Scores one embedding matrix.
 *
 * # Safety
 * Both handles must be live; `score` must be writable.
 */
enum NsStatus ns_detector_score_embedding(const struct NsDetector *detector,
                                          const struct NsEmbedding *embedding,
                                          double *score);

/**
 * Reads an `EMB1` file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NsStatus ns_embedding_read(const char *path, struct NsEmbedding **out);

/**
 * # Safety
 * `embedding` must be a live handle; `d` and `t` must be writable.
 */
enum NsStatus ns_embedding_shape(const struct NsEmbedding *embedding, uintptr_t *d, uintptr_t *t);

/**
 * # Safety
 * `embedding` must be null or a handle from [`ns_embedding_read`] not yet freed.
 */
void ns_embedding_free(struct NsEmbedding *embedding);

/**
 * Equal error rate of bonafide vs spoof scores (higher = more bonafide).
 * `threshold` may be null.
 *
 * # Safety
 * The arrays must hold `n_bonafide` and `n_spoof` doubles; `eer` must be
 * writable.
 */
enum NsStatus ns_compute_eer(const double *bonafide,
                             uintptr_t n_bonafide,
                             const double *spoof,
                             uintptr_t n_spoof,
                             double *eer,
                             double *threshold);

/**
 * Synthetic frontend embedding of one chunk: `d` unit-norm floats.
 *
 * # Safety
 * `chunk` must hold `len` floats and `out` room for `d` floats.
 */
enum NsStatus ns_synthetic_frontend(const float *chunk,
                                    uintptr_t len,
                                    uint64_t seed,
                                    uintptr_t d,
                                    float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NONSEM_H */
