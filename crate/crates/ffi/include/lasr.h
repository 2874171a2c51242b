#ifndef LASR_H
#define LASR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum LasrStatus {
  LASR_STATUS_OK = 0,
  LASR_STATUS_NULL_ARGUMENT = 1,
  LASR_STATUS_INVALID_INPUT = 2,
  LASR_STATUS_CONFIG = 3,
  LASR_STATUS_PARSE = 4,
  LASR_STATUS_IO = 5,
  LASR_STATUS_DEGENERATE = 6,
  LASR_STATUS_NUMERIC = 7,
  // A Rust panic was caught at the boundary.
  LASR_STATUS_INTERNAL = 8,
} LasrStatus;

// A loaded movie.
typedef struct LasrMovie LasrMovie;

// Settings for one full pipeline run.
typedef struct LasrRunConfig LasrRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// success. Valid until the next call on the same thread.
const char *lasr_last_error(void);

// Library version as a static NUL-terminated string.
const char *lasr_version(void);

// Load a LASR-text movie file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LasrStatus lasr_movie_load(const char *path, struct LasrMovie **out);

// Release a movie. Null is accepted.
//
// # Safety
// `movie` must come from [`lasr_movie_load`] and not be freed twice.
void lasr_movie_free(struct LasrMovie *movie);

// Frame count, rows and columns.
//
// # Safety
// `movie` must be a live handle; the out pointers must be valid.
enum LasrStatus lasr_movie_shape(const struct LasrMovie *movie,
                                 size_t *n_frames,
                                 size_t *rows,
                                 size_t *cols);

// Copy frame `k` row-major into `values`, which holds `len` doubles.
//
// # Safety
// `movie` must be a live handle and `values` writable for `len` doubles.
enum LasrStatus lasr_movie_frame(const struct LasrMovie *movie,
                                 size_t k,
                                 double *values,
                                 size_t len);

// Benjamini-Hochberg (`by = 0`) or Benjamini-Yekutieli (`by != 0`) step-up
// at level `q`. Writes 1/0 per p-value into `rejected` and the count into
// `n_rejected`.
//
// # Safety
// `pvalues` readable and `rejected` writable for `n` elements.
enum LasrStatus lasr_fdr_step_up(const double *pvalues,
                                 size_t n,
                                 double q,
                                 int32_t by,
                                 uint8_t *rejected,
                                 size_t *n_rejected);

// Minimum-misclassification threshold between the first component and the
// rest of an `m`-component normal mixture.
//
// # Safety
// The three arrays readable for `m` elements; `threshold` writable.
enum LasrStatus lasr_optimal_threshold(const double *weights,
                                       const double *means,
                                       const double *sds,
                                       size_t m,
                                       double *threshold);

// Default run settings: the built-in phantom as input.
struct LasrRunConfig *lasr_run_config_new(void);

// Release run settings. Null is accepted.
//
// # Safety
// `cfg` must come from [`lasr_run_config_new`] and not be freed twice.
void lasr_run_config_free(struct LasrRunConfig *cfg);

// Apply a key = value config file on top of the current settings.
//
// # Safety
// `cfg` live; `path` NUL-terminated.
enum LasrStatus lasr_run_config_load(struct LasrRunConfig *cfg, const char *path);

// Use two session directories as input.
//
// # Safety
// `cfg` live; both paths NUL-terminated.
enum LasrStatus lasr_run_config_set_sessions(struct LasrRunConfig *cfg,
                                             const char *before,
                                             const char *after);

// Seed for the phantom and every randomized step.
//
// # Safety
// `cfg` live.
enum LasrStatus lasr_run_config_set_seed(struct LasrRunConfig *cfg, uint64_t seed);

// Output directory.
//
// # Safety
// `cfg` live; `dir` NUL-terminated.
enum LasrStatus lasr_run_config_set_out_dir(struct LasrRunConfig *cfg, const char *dir);

// Run the full analysis and write its outputs. `total_rejected` receives
// the number of significant pixels over all frame pairs.
//
// # Safety
// `cfg` live; `total_rejected` writable.
enum LasrStatus lasr_run(const struct LasrRunConfig *cfg, size_t *total_rejected);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LASR_H */
