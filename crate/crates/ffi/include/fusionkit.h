#ifndef FUSIONKIT_H
#define FUSIONKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of points written by `fk_store_scan`.
 */
#define FK_GRID_POINTS 101

/**
 * Result code of every fallible call.
 */
typedef enum FkStatus {
  FK_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FK_NULL_POINTER = 1,
  /**
   * Bad dimension, weight, vector or buffer size.
   */
  FK_INVALID_ARGUMENT = 2,
  /**
   * Invalid configuration.
   */
  FK_CONFIG = 3,
  /**
   * Bad or inconsistent data (store, manifest, prompts).
   */
  FK_DATA = 4,
  FK_BRIDGE = 5,
  FK_IO = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  FK_PANIC = 7,
} FkStatus;

typedef enum FkFusionMode {
  FK_TEXT_ONLY = 0,
  FK_IMAGE_ONLY = 1,
  FK_STANDARD = 2,
  FK_CONFIDENCE = 3,
} FkFusionMode;

typedef enum FkMetric {
  FK_TOP1 = 0,
  FK_MEAN_PER_CLASS = 1,
} FkMetric;

/**
 * Opaque handle to an opened store.
 */
typedef struct FkStore FkStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next fusionkit call on the same thread.
 */
const char *fk_last_error(void);

/**
 * Opens an EMBS store (and its manifest). All class records of the store
 * form the prototypes; labeled queries form the evaluation set.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum FkStatus fk_store_open(const char *path, struct FkStore **out);

/**
 * Releases a store handle. Null is ignored.
 *
 * # Safety
 * `store` must come from `fk_store_open` and not be used afterwards.
 */
void fk_store_free(struct FkStore *store);

/**
 * Embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t fk_store_dim(const struct FkStore *store);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t fk_store_num_classes(const struct FkStore *store);

/**
 * Number of labeled queries, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t fk_store_num_queries(const struct FkStore *store);

/**
 * Unit-normalizes `dim` floats from `input` into `out` (may alias).
 *
 * # Safety
 * Both pointers must reference `dim` floats.
 */
enum FkStatus fk_normalize(const float *input, size_t dim, float *out);

/**
 * `out = w * t + (1 - w) * i`.
 *
 * # Safety
 * `t` and `i` must reference `dim` floats, `out` `dim` doubles.
 */
enum FkStatus fk_fuse_standard(const float *t, const float *i, size_t dim, double w, double *out);

/**
 * `out = w * t + (1 - w) * c * i`.
 *
 * # Safety
 * `t` and `i` must reference `dim` floats, `out` `dim` doubles.
 */
enum FkStatus fk_fuse_confidence(const float *t,
                                 const float *i,
                                 size_t dim,
                                 double w,
                                 double c,
                                 double *out);

/**
 * Per-class confidence `1 - softmax(q . t)` for `n` text rows stored
 * row-major in `texts` (`n * dim` floats). Writes `n` doubles.
 *
 * # Safety
 * Pointers must reference the stated number of elements.
 */
enum FkStatus fk_confidence(const float *q, const float *texts, size_t n, size_t dim, double *out);

/**
 * Classifies one query against the store's prototypes. `scores` may be
 * null; otherwise it receives `fk_store_num_classes` doubles.
 *
 * # Safety
 * `query` must reference `dim` floats; `predicted` must be writable.
 */
enum FkStatus fk_store_classify(const struct FkStore *store,
                                const float *query,
                                size_t dim,
                                enum FkFusionMode mode,
                                double w,
                                size_t *predicted,
                                double *scores);

/**
 * Scans the text weight over the 101-point grid on the store's queries.
 * `curve` receives `FK_GRID_POINTS` doubles; `best_w` the smallest best weight.
 *
 * # Safety
 * `curve` must hold `FK_GRID_POINTS` doubles; `best_w` must be writable.
 */
enum FkStatus fk_store_scan(const struct FkStore *store,
                            enum FkFusionMode mode,
                            enum FkMetric metric,
                            double *curve,
                            double *best_w);

/**
 * Runs an experiment from `key = value` config text and returns the JSON
 * report in `*report_json` (free with `fk_string_free`).
 *
 * # Safety
 * `config_text` must be nul-terminated; `report_json` must be writable.
 */
enum FkStatus fk_run_experiment(const char *config_text, char **report_json);

/**
 * Releases a string returned by fusionkit. Null is ignored.
 *
 * # Safety
 * `s` must come from fusionkit and not be used afterwards.
 */
void fk_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSIONKIT_H */
