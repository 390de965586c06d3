#ifndef DRERANK_H
#define DRERANK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DrStatus {
  DR_STATUS_OK = 0,
  DR_STATUS_NULL_POINTER = 1,
  DR_STATUS_INVALID_ARGUMENT = 2,
  DR_STATUS_IO = 3,
  DR_STATUS_FORMAT = 4,
  DR_STATUS_CACHE_MISS = 5,
  DR_STATUS_CONSISTENCY = 6,
  DR_STATUS_BUFFER_TOO_SMALL = 7,
  DR_STATUS_PANIC = 8,
  DR_STATUS_INTERNAL = 9,
} DrStatus;

/**
 * Scoring mode for closed-form cost queries.
 */
typedef enum DrMode {
  DR_MODE_CACHED = 0,
  DR_MODE_FRESH = 1,
  DR_MODE_CONCAT = 2,
} DrMode;

/**
 * A loaded document-encoding cache.
 */
typedef struct DrCache DrCache;

/**
 * A loaded checkpoint.
 */
typedef struct DrModel DrModel;

/**
 * Model shape used by [`dr_closed_form_pairs`].
 */
typedef struct DrShape {
  uint32_t heads;
  uint32_t n_lower;
  uint32_t k_layers;
  uint32_t max_question_len;
  uint32_t max_document_len;
} DrShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit) and returns the full message length
 * including the terminator. `buf` may be null when `len` is 0.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
size_t dr_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrStatus dr_model_load(const char *path, struct DrModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`dr_model_load`] and not be used afterwards.
 */
void dr_model_free(struct DrModel *model);

/**
 * Digest of all parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DrStatus dr_model_hash(const struct DrModel *model, uint64_t *out);

/**
 * Digest of the document encoder; cache entries are keyed by it.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DrStatus dr_model_document_hash(const struct DrModel *model, uint64_t *out);

/**
 * Shape of the model's encoders.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DrStatus dr_model_shape(const struct DrModel *model, struct DrShape *out);

/**
 * Loads an encoding cache file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrStatus dr_cache_load(const char *path, struct DrCache **out);

/**
 * Releases a cache; null is ignored.
 *
 * # Safety
 * `cache` must come from [`dr_cache_load`] and not be used afterwards.
 */
void dr_cache_free(struct DrCache *cache);

/**
 * Number of cached documents.
 *
 * # Safety
 * `cache` must be a live handle and `out` a valid pointer.
 */
enum DrStatus dr_cache_len(const struct DrCache *cache, size_t *out);

/**
 * Copies the `rows × width` encoding of `doc_id` under `model_hash` into
 * `buf` (row-major) and its unpadded length into `true_length`. A key
 * absent under that hash is [`DrStatus::CacheMiss`]; a buffer shorter than
 * `rows × width` floats is [`DrStatus::BufferTooSmall`].
 *
 * # Safety
 * `cache` must be a live handle, `doc_id` NUL-terminated, `buf` valid for
 * `buf_len` floats and `rows`, `width`, `true_length` valid pointers.
 */
enum DrStatus dr_cache_get(const struct DrCache *cache,
                           const char *doc_id,
                           uint64_t model_hash,
                           float *buf,
                           size_t buf_len,
                           size_t *rows,
                           size_t *width,
                           size_t *true_length);

/**
 * Relevance probabilities of `n_docs` cached documents for `question`,
 * written to `out_probs` in input order. Every missing key is reported in
 * one [`DrStatus::CacheMiss`] before anything is scored.
 *
 * # Safety
 * `model` and `cache` must be live handles, `question` and each of the
 * `n_docs` entries of `doc_ids` NUL-terminated, and `out_probs` valid for
 * `n_docs` floats.
 */
enum DrStatus dr_score_cached(const struct DrModel *model,
                              const struct DrCache *cache,
                              const char *question,
                              const char *const *doc_ids,
                              size_t n_docs,
                              float *out_probs);

/**
 * Relevance probabilities of `n_docs` document texts for `question`,
 * encoding each document on the fly (any architecture).
 *
 * # Safety
 * `model` must be a live handle, `question` and each of the `n_docs`
 * entries of `doc_texts` NUL-terminated, and `out_probs` valid for
 * `n_docs` floats.
 */
enum DrStatus dr_score_texts(const struct DrModel *model,
                             const char *question,
                             const char *const *doc_texts,
                             size_t n_docs,
                             float *out_probs);

/**
 * Attention pairs needed to score `n_docs` full-length candidates for one
 * question in `mode`.
 *
 * # Safety
 * `shape` and `out` must be valid pointers.
 */
enum DrStatus dr_closed_form_pairs(const struct DrShape *shape,
                                   enum DrMode mode,
                                   uint64_t n_docs,
                                   uint64_t *out);

/**
 * Library version, a static NUL-terminated string.
 */
const char *dr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRERANK_H */
