#ifndef MMFUSE_H
#define MMFUSE_H

/* Generated by cbindgen from mmfuse-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum MmfStatus {
  MMF_STATUS_OK = 0,
  MMF_STATUS_NULL_POINTER = 1,
  MMF_STATUS_INVALID_UTF8 = 2,
  MMF_STATUS_INVALID_ARGUMENT = 3,
  MMF_STATUS_IO = 4,
  MMF_STATUS_BAD_FORMAT = 5,
  MMF_STATUS_UNSUPPORTED = 6,
  MMF_STATUS_INTERNAL = 7,
} MmfStatus;

/**
 * Split selector for dataset queries.
 */
typedef enum MmfSplit {
  MMF_SPLIT_TRAIN = 0,
  MMF_SPLIT_DEV = 1,
  MMF_SPLIT_TEST = 2,
} MmfSplit;

/**
 * Training/evaluation regime selector.
 */
typedef enum MmfRegime {
  MMF_REGIME_ALL = 0,
  MMF_REGIME_PAIRED_ALL = 1,
  MMF_REGIME_PAIRED_TRAIN = 2,
} MmfRegime;

/**
 * Opaque trained-model handle.
 */
typedef struct MmfCheckpoint MmfCheckpoint;

/**
 * Opaque dataset handle.
 */
typedef struct MmfDataset MmfDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mmf_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *mmf_version(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by an mmfuse call and not freed before.
 */
void mmf_string_free(char *s);

/**
 * Load an MMCK1 checkpoint file into an opaque handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmfStatus mmf_checkpoint_load(const char *path, struct MmfCheckpoint **out);

/**
 * # Safety
 * `handle` must come from `mmf_checkpoint_load` and not be freed twice.
 */
void mmf_checkpoint_free(struct MmfCheckpoint *handle);

/**
 * Model kind of a checkpoint (e.g. "mm-gated-xatt"), as an owned string.
 *
 * # Safety
 * `handle` must be a live checkpoint handle.
 */
char *mmf_checkpoint_model(const struct MmfCheckpoint *handle);

/**
 * Number of classes the checkpoint predicts.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum MmfStatus mmf_checkpoint_num_classes(const struct MmfCheckpoint *handle, uintptr_t *out);

/**
 * Load an MMFV1 dataset directory into an opaque handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmfStatus mmf_dataset_load(const char *path, struct MmfDataset **out);

/**
 * # Safety
 * `handle` must come from `mmf_dataset_load` and not be freed twice.
 */
void mmf_dataset_free(struct MmfDataset *handle);

/**
 * Record count of one split.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum MmfStatus mmf_dataset_split_len(const struct MmfDataset *handle,
                                     enum MmfSplit split,
                                     uintptr_t *out);

/**
 * Classify one example from row-major f32 feature buffers. `image` may be
 * NULL, in which case the checkpoint's stored average image is used.
 * Writes the predicted class index to `out_class`.
 *
 * # Safety
 * `text` must point to `text_rows * text_cols` floats; `image`, when
 * non-NULL, to `image_rows * image_cols` floats; `out_class` must be valid.
 */
enum MmfStatus mmf_predict(const struct MmfCheckpoint *handle,
                           const float *text,
                           uintptr_t text_rows,
                           uintptr_t text_cols,
                           const float *image,
                           uintptr_t image_rows,
                           uintptr_t image_cols,
                           uintptr_t *out_class);

/**
 * Evaluate a checkpoint on a dataset's test split under a regime,
 * returning the metrics as an owned JSON string.
 *
 * # Safety
 * All pointers must be valid; free the string with `mmf_string_free`.
 */
enum MmfStatus mmf_evaluate_json(const struct MmfCheckpoint *ckpt,
                                 const struct MmfDataset *data,
                                 enum MmfRegime regime,
                                 char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMFUSE_H */
