#ifndef RARFT_H
#define RARFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RarftStatus {
  RARFT_STATUS_OK = 0,
  RARFT_STATUS_NULL_POINTER = 1,
  RARFT_STATUS_INVALID_UTF8 = 2,
  RARFT_STATUS_INVALID_ARGUMENT = 3,
  RARFT_STATUS_PARSE_ERROR = 4,
  RARFT_STATUS_NOT_FOUND = 5,
  RARFT_STATUS_PROVIDER_ERROR = 6,
  RARFT_STATUS_EVALUATION_ERROR = 7,
  RARFT_STATUS_IO_ERROR = 8,
  RARFT_STATUS_PANIC = 99,
} RarftStatus;

/**
 * Opaque validated dataset with its relevant/irrelevant pairing.
 */
typedef struct RarftDataset RarftDataset;

/**
 * Opaque embedding provider.
 */
typedef struct RarftEmbedder RarftEmbedder;

typedef struct RarftRewardBreakdown {
  double format;
  double refuse_iou;
  double explain;
  double correction;
  double total;
} RarftRewardBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the calling thread's last error message, or NULL if none.
 * Free with `rarft_string_free`.
 */
char *rarft_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void rarft_string_free(char *s);

/**
 * Deterministic 256-dimensional feature-hashing embedder.
 */
struct RarftEmbedder *rarft_hash_embedder_new(void);

/**
 * # Safety
 * `e` must be NULL or a handle from `rarft_hash_embedder_new`, not yet freed.
 */
void rarft_embedder_free(struct RarftEmbedder *e);

/**
 * Parses dataset JSONL text into a new handle stored in `*out`.
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string; `out` must be writable.
 */
enum RarftStatus rarft_dataset_from_jsonl(const char *jsonl, struct RarftDataset **out);

/**
 * Reads a dataset JSONL file into a new handle stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RarftStatus rarft_dataset_load(const char *path, struct RarftDataset **out);

/**
 * # Safety
 * `d` must be a live dataset handle or NULL.
 */
size_t rarft_dataset_len(const struct RarftDataset *d);

/**
 * # Safety
 * `d` must be NULL or a dataset handle from this library, not yet freed.
 */
void rarft_dataset_free(struct RarftDataset *d);

/**
 * Scores `raw_output` against the sample `sample_id` of `dataset`.
 *
 * # Safety
 * Handles must be live; strings NUL-terminated; `out` writable.
 */
enum RarftStatus rarft_total_reward(const struct RarftDataset *dataset,
                                    const struct RarftEmbedder *embedder,
                                    const char *sample_id,
                                    const char *raw_output,
                                    bool strict_format_gating,
                                    struct RarftRewardBreakdown *out);

/**
 * # Safety
 * `raw_output` must be NUL-terminated; `out` writable.
 */
enum RarftStatus rarft_format_reward(const char *raw_output, double *out);

/**
 * Extracts the first time span from answer text. `*found` is false when
 * the answer is a refusal.
 *
 * # Safety
 * `answer` must be NUL-terminated; out-pointers writable.
 */
enum RarftStatus rarft_extract_segment(const char *answer, bool *found, double *start, double *end);

/**
 * Temporal IoU of `[s1, e1]` and `[s2, e2]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum RarftStatus rarft_iou(double s1, double e1, double s2, double e2, double *out);

/**
 * Writes the group-normalized advantages of `rewards[0..n]` to `out[0..n]`.
 *
 * # Safety
 * `rewards` must point to `n` readable values and `out` to `n` writable ones.
 */
enum RarftStatus rarft_normalize_advantages(const double *rewards, size_t n, double *out);

/**
 * Computes RA-IoU, R@m and F1 for `outputs_jsonl` (lines of
 * `{"sample_id", "output"}`) without contacting any provider. The report
 * JSON is stored in `*report_json`.
 *
 * # Safety
 * `dataset` must be live; `outputs_jsonl` NUL-terminated; `report_json` writable.
 */
enum RarftStatus rarft_evaluate_offline(const struct RarftDataset *dataset,
                                        const char *outputs_jsonl,
                                        char **report_json);

/**
 * Runs the GRPO simulation on a scenario (TOML text, or NULL for the
 * bundled refusal scenario) with the hash embedder. `*converged` receives
 * the convergence verdict; when `trace_jsonl` is non-NULL it receives the
 * per-step trace.
 *
 * # Safety
 * `scenario_toml` must be NULL or NUL-terminated; `converged` writable;
 * `trace_jsonl` NULL or writable.
 */
enum RarftStatus rarft_simulate(const char *scenario_toml,
                                uint64_t seed,
                                bool *converged,
                                char **trace_jsonl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RARFT_H */
