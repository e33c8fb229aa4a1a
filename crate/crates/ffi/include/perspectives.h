#ifndef PERSPECTIVES_H
#define PERSPECTIVES_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code returned by every function.
 */
typedef enum PerspStatus {
  PERSP_STATUS_OK = 0,
  /**
   * The engine answered, but at least one policy could not reach its
   * embedding provider. The JSON output is still written.
   */
  PERSP_STATUS_DEGRADED = 1,
  PERSP_STATUS_NULL_ARGUMENT = 2,
  PERSP_STATUS_INVALID_UTF8 = 3,
  PERSP_STATUS_INVALID_ARGUMENT = 4,
  PERSP_STATUS_IO = 5,
  PERSP_STATUS_PARSE = 6,
  PERSP_STATUS_CONFIG = 7,
  PERSP_STATUS_PROVIDER_UNAVAILABLE = 8,
  PERSP_STATUS_INTERNAL = 9,
  PERSP_STATUS_PANIC = 10,
} PerspStatus;

/**
 * Opaque engine handle.
 */
typedef struct PerspEngine PerspEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens an engine from a TOML configuration file.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string. `out_engine` must be
 * valid for writes. The handle must be released with [`persp_engine_free`].
 */
enum PerspStatus persp_engine_open(const char *config_path, struct PerspEngine **out_engine);

/**
 * Releases an engine. Passing NULL is a no-op.
 *
 * # Safety
 * `engine` must be NULL or a handle from [`persp_engine_open`] that has not
 * been freed.
 */
void persp_engine_free(struct PerspEngine *engine);

/**
 * Extracts dollar amounts from `text` and writes the suggestions for each as
 * JSON to `out_json`. Returns [`PerspStatus::Degraded`] when an embedding
 * provider was unreachable; the JSON then lists the warnings.
 *
 * # Safety
 * `engine` must be a live handle, `text` a valid NUL-terminated string and
 * `out_json` valid for writes. The engine may be shared across threads.
 */
enum PerspStatus persp_engine_suggest_json(const struct PerspEngine *engine,
                                           const char *text,
                                           char **out_json);

/**
 * Writes the dollar amounts found in `text` as a JSON array to `out_json`.
 * Spans count Unicode scalar values, not bytes.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out_json` valid for
 * writes.
 */
enum PerspStatus persp_extract_json(const char *text, char **out_json);

/**
 * Writes the per-capita phrase for `value` dollars over `population` people,
 * for example "about $600 per person in the US".
 *
 * # Safety
 * `value` must be a valid NUL-terminated string. `suffix` may be NULL for the
 * default. `out_phrase` must be valid for writes.
 */
enum PerspStatus persp_per_capita(const char *value,
                                  uint64_t population,
                                  const char *suffix,
                                  char **out_phrase);

/**
 * Writes the phrase comparing `focal` to a reference object, for example
 * "about 2 times the value of the net worth of Bill Gates".
 *
 * # Safety
 * All string arguments must be valid NUL-terminated strings and `out_phrase`
 * valid for writes.
 */
enum PerspStatus persp_format_multiplier(const char *focal,
                                         const char *reference_value,
                                         const char *reference_phrase,
                                         char **out_phrase);

/**
 * Rounds `value` to `digits` significant digits, half away from zero, and
 * writes the result as a plain decimal string.
 *
 * # Safety
 * `value` must be a valid NUL-terminated string and `out_value` valid for
 * writes.
 */
enum PerspStatus persp_round_sig(const char *value, uint32_t digits, char **out_value);

/**
 * Message for the most recent failure on the calling thread, or NULL. The
 * pointer stays valid until the next call into this library on the same
 * thread and must not be freed.
 */
const char *persp_last_error(void);

/**
 * Releases a string written by this library. Passing NULL is a no-op.
 *
 * # Safety
 * `s` must be NULL or a string returned through an out-parameter of this
 * library that has not been freed.
 */
void persp_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *persp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSPECTIVES_H */
