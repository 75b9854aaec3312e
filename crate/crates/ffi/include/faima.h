#ifndef FAIMA_H
#define FAIMA_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Channel numbering used by this interface.
 */
#define FAIMA_CHANNEL_LIG 0

#define FAIMA_CHANNEL_DOM 1

#define FAIMA_CHANNEL_SEN 2

#define FAIMA_CHANNEL_AVG 3

typedef enum FaimaStatus {
  FAIMA_STATUS_OK = 0,
  FAIMA_STATUS_NULL_POINTER = 1,
  FAIMA_STATUS_INVALID_UTF8 = 2,
  FAIMA_STATUS_IO = 3,
  FAIMA_STATUS_INVALID_DATA = 4,
  FAIMA_STATUS_CORRUPT = 5,
  FAIMA_STATUS_UNSUPPORTED_VERSION = 6,
  FAIMA_STATUS_UNKNOWN_ID = 7,
  FAIMA_STATUS_MISMATCH = 8,
  FAIMA_STATUS_INVALID_ARGUMENT = 9,
  FAIMA_STATUS_BUFFER_TOO_SMALL = 10,
  FAIMA_STATUS_INTERNAL = 11,
} FaimaStatus;

/**
 * A loaded corpus with its relation registry.
 */
typedef struct FaimaCorpus FaimaCorpus;

/**
 * A loaded encoder checkpoint.
 */
typedef struct FaimaEncoder FaimaEncoder;

/**
 * A feature index over a set of sentences.
 */
typedef struct FaimaIndex FaimaIndex;

/**
 * Heuristic similarity scores and feature bits for a sentence pair.
 */
typedef struct FaimaProfile {
  double lig;
  double dom;
  double sen;
  bool lig_bit;
  bool dom_bit;
  bool sen_bit;
} FaimaProfile;

/**
 * One retrieved exemplar. `row` is the index row, see `faima_index_record_id`.
 */
typedef struct FaimaExemplar {
  size_t row;
  uint32_t channel;
  double distance;
} FaimaExemplar;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *faima_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on this thread.
 */
const char *faima_last_error_message(void);

void faima_clear_error(void);

/**
 * Loads a JSONL corpus. `registry_path` may be NULL; otherwise the corpus
 * is bound to that registry snapshot.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
enum FaimaStatus faima_corpus_load(const char *path,
                                   const char *registry_path,
                                   struct FaimaCorpus **out);

/**
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t faima_corpus_len(const struct FaimaCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void faima_corpus_free(struct FaimaCorpus *corpus);

/**
 * Heuristic similarity of two sentences of `corpus` at the default thresholds.
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, `out` writable.
 */
enum FaimaStatus faima_similarity_profile(const struct FaimaCorpus *corpus,
                                          const char *id_a,
                                          const char *id_b,
                                          struct FaimaProfile *out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum FaimaStatus faima_checkpoint_load(const char *path, struct FaimaEncoder **out);

/**
 * Embedding dimension, or 0 for NULL.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t faima_encoder_dim(const struct FaimaEncoder *encoder);

/**
 * # Safety
 * `encoder` must be NULL or a handle not yet freed.
 */
void faima_encoder_free(struct FaimaEncoder *encoder);

/**
 * Writes the `channel` embedding of sentence `id` into `out[0..len]`;
 * `len` must equal the encoder dimension.
 *
 * # Safety
 * Handles must be live and `out` must hold `len` doubles.
 */
enum FaimaStatus faima_encode(const struct FaimaEncoder *encoder,
                              const struct FaimaCorpus *corpus,
                              const char *id,
                              uint32_t channel,
                              double *out,
                              size_t len);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum FaimaStatus faima_index_load(const char *path, struct FaimaIndex **out);

/**
 * Builds an exact index over every sentence of `corpus`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum FaimaStatus faima_index_build(const struct FaimaCorpus *corpus,
                                   const struct FaimaEncoder *encoder,
                                   struct FaimaIndex **out);

/**
 * # Safety
 * `index` must be NULL or a live handle.
 */
size_t faima_index_len(const struct FaimaIndex *index);

/**
 * Record id of an index row, or NULL when out of range. Valid while the
 * index handle lives.
 *
 * # Safety
 * `index` must be NULL or a live handle.
 */
const char *faima_index_record_id(const struct FaimaIndex *index, size_t row);

/**
 * # Safety
 * `index` must be NULL or a handle not yet freed.
 */
void faima_index_free(struct FaimaIndex *index);

/**
 * Retrieves `k` exemplars (k >= 3: one per feature channel, the rest from
 * Avg) for sentence `id` of `corpus`. Writes at most `cap` entries to `out`
 * and the count to `written`.
 *
 * # Safety
 * Handles must be live; `out` must hold `cap` entries; `written` writable.
 */
enum FaimaStatus faima_retrieve(const struct FaimaIndex *index,
                                const struct FaimaEncoder *encoder,
                                const struct FaimaCorpus *corpus,
                                const char *id,
                                size_t k,
                                struct FaimaExemplar *out,
                                size_t cap,
                                size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIMA_H */
