#ifndef PAFS_H
#define PAFS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum PafsStatus {
  PAFS_STATUS_OK = 0,
  PAFS_STATUS_NULL_POINTER = 1,
  PAFS_STATUS_INVALID_ARGUMENT = 2,
  PAFS_STATUS_IO = 3,
  PAFS_STATUS_FORMAT = 4,
  PAFS_STATUS_CORRUPTION = 5,
  PAFS_STATUS_CONFIG = 6,
  PAFS_STATUS_CONTRACT = 7,
  PAFS_STATUS_EMPTY_INPUT = 8,
  PAFS_STATUS_NON_FINITE = 9,
  PAFS_STATUS_BUFFER_TOO_SMALL = 10,
  PAFS_STATUS_PANIC = 11,
} PafsStatus;

// A prepared spectrogram cache held in memory.
typedef struct PafsCache PafsCache;

// A trained model loaded from a checkpoint.
typedef struct PafsModel PafsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pafs_version(void);

// Copies the calling thread's last error message into `buf` (always
// NUL-terminated when `len > 0`) and returns the full message length, or 0
// when there is no error.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t pafs_last_error(char *buf, size_t len);

// Loads a checkpoint written by `pafs train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PafsStatus pafs_model_load(const char *path, struct PafsModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must be null or a handle from `pafs_model_load` not yet freed.
void pafs_model_free(struct PafsModel *model);

// Spectrogram shape the model expects and the length of one embedding.
//
// # Safety
// `model` must be a live handle; output pointers must be valid.
enum PafsStatus pafs_model_shape(const struct PafsModel *model,
                                 size_t *n_mels,
                                 size_t *n_frames,
                                 size_t *embedding_dim);

// Embeds `count` standardized spectrograms (row-major, `n_mels * n_frames`
// values each) into `out` (`count * embedding_dim` values). Inference
// uses the original spectrogram for all four views.
//
// # Safety
// `spectrograms` must hold `count * n_mels * n_frames` floats and `out`
// `out_len` writable floats.
enum PafsStatus pafs_model_embed(const struct PafsModel *model,
                                 const float *spectrograms,
                                 size_t count,
                                 float *out,
                                 size_t out_len);

// Nearest-prototype classification of `n_query` spectrograms against a
// support set whose labels lie in `0..n_way` (every label present).
// Writes one predicted label per query.
//
// # Safety
// Buffers must hold the stated number of spectrograms / labels.
enum PafsStatus pafs_model_classify(const struct PafsModel *model,
                                    const float *support,
                                    const uint32_t *support_labels,
                                    size_t n_support,
                                    size_t n_way,
                                    const float *query,
                                    size_t n_query,
                                    uint32_t *out_labels);

// Opens a spectrogram cache file written by `pafs prepare`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PafsStatus pafs_cache_open(const char *path, struct PafsCache **out);

// Releases a cache; null is ignored.
//
// # Safety
// `cache` must be null or a handle from `pafs_cache_open` not yet freed.
void pafs_cache_free(struct PafsCache *cache);

// Record count and per-record shape.
//
// # Safety
// `cache` must be a live handle; output pointers must be valid.
enum PafsStatus pafs_cache_info(const struct PafsCache *cache,
                                size_t *count,
                                size_t *n_mels,
                                size_t *n_frames);

// Copies record `index` (row-major) into `out` and its class id into
// `class_id`.
//
// # Safety
// `cache` must be a live handle, `out` must hold `out_len` floats and
// `class_id` must be valid.
enum PafsStatus pafs_cache_record(const struct PafsCache *cache,
                                  size_t index,
                                  uint32_t *class_id,
                                  float *out,
                                  size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAFS_H */
