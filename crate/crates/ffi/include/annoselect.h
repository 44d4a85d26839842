#ifndef ANNOSELECT_H
#define ANNOSELECT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sample-selection strategy of a session.
 */
typedef enum AnnoMethod {
  ANNO_METHOD_RANDOM = 0,
  ANNO_METHOD_FAFT = 1,
  ANNO_METHOD_TWO_DV = 2,
} AnnoMethod;

/**
 * Distance used by FAFT.
 */
typedef enum AnnoMetric {
  ANNO_METRIC_COSINE = 0,
  ANNO_METRIC_EUCLIDEAN = 1,
} AnnoMetric;

/**
 * Result code of every fallible call.
 */
typedef enum AnnoStatus {
  ANNO_STATUS_OK = 0,
  ANNO_STATUS_NULL_POINTER = 1,
  ANNO_STATUS_INVALID_ARGUMENT = 2,
  ANNO_STATUS_DATASET = 3,
  ANNO_STATUS_SAMPLING = 4,
  ANNO_STATUS_SESSION = 5,
  ANNO_STATUS_BUFFER_TOO_SMALL = 6,
  ANNO_STATUS_IO = 7,
  ANNO_STATUS_PANIC = 99,
} AnnoStatus;

/**
 * Opaque ingested dataset.
 */
typedef struct AnnoDataset AnnoDataset;

/**
 * Opaque annotation session.
 */
typedef struct AnnoSession AnnoSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Release with
 * [`anno_string_free`].
 */
char *anno_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void anno_string_free(char *s);

/**
 * Ingests a dataset directory or manifest file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AnnoStatus anno_dataset_open(const char *path, struct AnnoDataset **out);

/**
 * # Safety
 * `ds` must come from [`anno_dataset_open`] or be NULL.
 */
void anno_dataset_free(struct AnnoDataset *ds);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `ds` must be a live handle or NULL.
 */
size_t anno_dataset_n_samples(const struct AnnoDataset *ds);

/**
 * Feature dimensionality, or 0 for NULL.
 *
 * # Safety
 * `ds` must be a live handle or NULL.
 */
size_t anno_dataset_n_dims(const struct AnnoDataset *ds);

/**
 * Writes `budget` distinct indices from `0..n_total` to `out`.
 *
 * # Safety
 * `out` must point to `out_len` writable entries.
 */
enum AnnoStatus anno_sample_random(size_t n_total,
                                   size_t budget,
                                   uint64_t seed,
                                   size_t *out,
                                   size_t out_len);

/**
 * Writes the first `budget` FAFT picks over the dataset's features to `out`.
 *
 * # Safety
 * `ds` must be a live handle and `out` must point to `out_len` writable entries.
 */
enum AnnoStatus anno_sample_faft(const struct AnnoDataset *ds,
                                 size_t budget,
                                 uint64_t seed,
                                 enum AnnoMetric metric_kind,
                                 size_t *out,
                                 size_t out_len);

/**
 * Cosine distance of two vectors of length `len`.
 *
 * # Safety
 * `u` and `v` must point to `len` readable values; `out` must be valid.
 */
enum AnnoStatus anno_cosine_distance(const double *u, const double *v, size_t len, double *out);

/**
 * Hellinger distance of two discrete distributions of length `len`.
 *
 * # Safety
 * `p` and `q` must point to `len` readable values; `out` must be valid.
 */
enum AnnoStatus anno_hellinger(const double *p, const double *q, size_t len, double *out);

/**
 * Starts a session on one track. The dataset may be freed afterwards.
 *
 * # Safety
 * `ds` must be a live handle, strings NUL-terminated, `out` valid.
 */
enum AnnoStatus anno_session_create(const struct AnnoDataset *ds,
                                    const char *track,
                                    enum AnnoMethod method,
                                    size_t budget,
                                    uint64_t seed,
                                    const char *annotator_id,
                                    bool expert,
                                    struct AnnoSession **out);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void anno_session_free(struct AnnoSession *s);

/**
 * Global index of the sample to annotate next; `*has_current` is false when
 * there is none.
 *
 * # Safety
 * `s` must be a live handle; `out` and `has_current` valid.
 */
enum AnnoStatus anno_session_current(const struct AnnoSession *s, size_t *out, bool *has_current);

/**
 * Labels a sample by global index. A NULL `class_id` marks it erroneous.
 * `labeled_count`, when not NULL, receives the count afterwards.
 *
 * # Safety
 * `s` must be a live handle; `class_id` NULL or NUL-terminated.
 */
enum AnnoStatus anno_session_assign(struct AnnoSession *s,
                                    size_t sample_index,
                                    const char *class_id,
                                    size_t *labeled_count);

/**
 * Number of labeled samples, or 0 for NULL.
 *
 * # Safety
 * `s` must be a live handle or NULL.
 */
size_t anno_session_labeled_count(const struct AnnoSession *s);

/**
 * Exports the labels as CSV into a new string. Release with [`anno_string_free`].
 *
 * # Safety
 * `s` must be a live handle and `out` valid.
 */
enum AnnoStatus anno_session_export_csv(const struct AnnoSession *s, char **out);

/**
 * Writes a snapshot file.
 *
 * # Safety
 * `s` must be a live handle and `path` NUL-terminated.
 */
enum AnnoStatus anno_session_save(const struct AnnoSession *s, const char *path);

/**
 * Restores a session from a snapshot file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum AnnoStatus anno_session_load(const char *path, struct AnnoSession **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANNOSELECT_H */
