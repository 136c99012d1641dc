#ifndef AIS_H
#define AIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Negative values are errors.
 */
typedef enum AisStatus {
  AIS_STATUS_OK = 0,
  /**
   * `ais_engine_next_task` found no open assignment.
   */
  AIS_STATUS_NO_TASK = 1,
  AIS_STATUS_NULL_ARGUMENT = -1,
  AIS_STATUS_INVALID_UTF8 = -2,
  AIS_STATUS_INVALID_ARGUMENT = -3,
  AIS_STATUS_NOT_FOUND = -4,
  AIS_STATUS_CONFLICT = -5,
  AIS_STATUS_REJECTED = -6,
  AIS_STATUS_INGEST_FAILED = -7,
  AIS_STATUS_IO = -8,
  AIS_STATUS_INSUFFICIENT_DATA = -9,
  AIS_STATUS_PANIC = -99,
} AisStatus;

/**
 * Opaque engine handle.
 */
typedef struct AisEngine AisEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ais_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ais_string_free(char *s);

/**
 * Creates an in-memory engine.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum AisStatus ais_engine_new(uint32_t replication, bool pilot, struct AisEngine **out);

/**
 * Opens (or creates) a durable engine in directory `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AisStatus ais_engine_open(const char *dir,
                               uint32_t replication,
                               bool pilot,
                               struct AisEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from `ais_engine_new`/`ais_engine_open` and not have
 * been freed.
 */
void ais_engine_free(struct AisEngine *engine);

/**
 * Imports task lines from `jsonl`. On success `*summary_json` receives
 * the import summary as JSON.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_import_jsonl(const struct AisEngine *engine,
                                       const char *jsonl,
                                       const char *dataset_id,
                                       const char *kind,
                                       char **summary_json);

/**
 * Imports the task file at `path`; see `ais_engine_import_jsonl`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_import_file(const struct AisEngine *engine,
                                      const char *path,
                                      const char *dataset_id,
                                      const char *kind,
                                      char **summary_json);

/**
 * Assigns the dataset's unassigned tasks to `pool_len` annotators.
 *
 * # Safety
 * `pool` must point to `pool_len` NUL-terminated strings.
 */
enum AisStatus ais_engine_assign(const struct AisEngine *engine,
                                 const char *dataset_id,
                                 const char *const *pool,
                                 size_t pool_len,
                                 uint64_t seed,
                                 size_t *created);

/**
 * Fetches the annotator's next stage payload as JSON into `*payload_json`.
 * Returns `NoTask` (and stores null) when nothing is open.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_next_task(const struct AisEngine *engine,
                                    const char *annotator_id,
                                    char **payload_json);

/**
 * Stage-1 answer. `justification` may be null.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_submit_stage1(const struct AisEngine *engine,
                                        const char *annotator_id,
                                        const char *task_id,
                                        bool interpretable,
                                        const char *justification);

/**
 * Stage-2 answer. `justification` may be null.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_submit_stage2(const struct AisEngine *engine,
                                        const char *annotator_id,
                                        const char *task_id,
                                        bool ais,
                                        const char *justification);

/**
 * Flags a task. `reason` is one of `missing_components`,
 * `malformed_text`, `underspecified_source`, `expert_knowledge_required`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_submit_flag(const struct AisEngine *engine,
                                      const char *annotator_id,
                                      const char *task_id,
                                      const char *reason);

/**
 * Writes the dataset's ratings as rating lines into `*jsonl`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum AisStatus ais_engine_export_ratings(const struct AisEngine *engine,
                                         const char *dataset_id,
                                         char **jsonl);

/**
 * Nominal Krippendorff's alpha of a yes/no grid (see `grid_matrix`).
 *
 * # Safety
 * `grid` must point to `n_items * n_raters` values; `out` must be valid.
 */
enum AisStatus ais_krippendorff_alpha(const int8_t *grid,
                                      size_t n_items,
                                      size_t n_raters,
                                      double *out);

/**
 * Pooled pairwise agreement of a yes/no grid (see `grid_matrix`).
 *
 * # Safety
 * `grid` must point to `n_items * n_raters` values; `out` must be valid.
 */
enum AisStatus ais_pairwise_agreement(const int8_t *grid,
                                      size_t n_items,
                                      size_t n_raters,
                                      double *out);

/**
 * Two-sided permutation p-value for the difference of two proportions.
 * Outcomes are bytes; any nonzero byte is a success.
 *
 * # Safety
 * `a` and `b` must point to `len_a` and `len_b` bytes; `out` must be valid.
 */
enum AisStatus ais_proportion_significance(const uint8_t *a,
                                           size_t len_a,
                                           const uint8_t *b,
                                           size_t len_b,
                                           uint64_t iterations,
                                           uint64_t seed,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIS_H */
