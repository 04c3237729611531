#ifndef LAICLAB_H
#define LAICLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function in this ABI.
 */
typedef enum {
  LAICLAB_STATUS_OK = 0,
  /**
   * Invalid or inconsistent configuration.
   */
  LAICLAB_STATUS_CONFIG = 1,
  /**
   * Numerical failure (divergence, non-SPD matrix, no convergence).
   */
  LAICLAB_STATUS_NUMERICAL = 2,
  /**
   * File system or serialization failure.
   */
  LAICLAB_STATUS_IO = 3,
  /**
   * A required pointer argument was null.
   */
  LAICLAB_STATUS_NULL_ARGUMENT = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  LAICLAB_STATUS_INVALID_UTF8 = 5,
} LaiclabStatus;

/**
 * Opaque parsed experiment configuration.
 */
typedef struct LaiclabConfig LaiclabConfig;

/**
 * Opaque store of completed runs (records plus manifest).
 */
typedef struct LaiclabStore LaiclabStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread; do not free it.
 */
const char *laiclab_last_error(void);

/**
 * Library version as a static string; do not free it.
 */
const char *laiclab_version(void);

/**
 * Parse and validate a TOML configuration from memory. Returns null on
 * failure; consult `laiclab_last_error`.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
LaiclabConfig *laiclab_config_parse(const char *text);

/**
 * Load and validate a TOML configuration file. Returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
LaiclabConfig *laiclab_config_load(const char *path);

/**
 * Release a configuration handle. Null is a no-op.
 *
 * # Safety
 * `config` must have come from this library and not be freed twice.
 */
void laiclab_config_free(LaiclabConfig *config);

/**
 * Run the configured scheme for every replicate. Returns null on failure.
 *
 * # Safety
 * `config` must be a live handle from this library.
 */
LaiclabStore *laiclab_run(const LaiclabConfig *config);

/**
 * Run every suite scheme against the same simulated worlds. Returns null on
 * failure.
 *
 * # Safety
 * `config` must be a live handle from this library.
 */
LaiclabStore *laiclab_suite(const LaiclabConfig *config);

/**
 * Write a store to a directory (created if missing).
 *
 * # Safety
 * `store` must be a live handle; `dir` a valid NUL-terminated string.
 */
LaiclabStatus laiclab_store_save(const LaiclabStore *store, const char *dir);

/**
 * Load a store previously written by `laiclab_store_save` or the CLI.
 * Returns null on failure.
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string.
 */
LaiclabStore *laiclab_store_load(const char *dir);

/**
 * Release a store handle. Null is a no-op.
 *
 * # Safety
 * `store` must have come from this library and not be freed twice.
 */
void laiclab_store_free(LaiclabStore *store);

/**
 * Diagnose a store: per-run autocorrelations, whiteness flags, departure
 * statistics, and spatial correlation, as a JSON document. `phase` of zero
 * means no phase stratification. Returns null on failure; free the result
 * with `laiclab_string_free`.
 *
 * # Safety
 * `store` must be a live handle from this library.
 */
char *laiclab_diagnose_json(const LaiclabStore *store, size_t lags, size_t phase);

/**
 * Evaluate the exact moment oracle for a linear configuration and return a
 * JSON summary. Returns null on failure; free the result with
 * `laiclab_string_free`.
 *
 * # Safety
 * `config` must be a live handle from this library.
 */
char *laiclab_oracle_json(const LaiclabConfig *config);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have come from this library and not be freed twice.
 */
void laiclab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAICLAB_H */
