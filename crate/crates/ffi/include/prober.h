#ifndef PROBER_H
#define PROBER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum ProberStatus {
  PROBER_STATUS_OK = 0,
  PROBER_STATUS_NULL_ARGUMENT = 1,
  PROBER_STATUS_INVALID_UTF8 = 2,
  PROBER_STATUS_INVALID_ARGUMENT = 3,
  PROBER_STATUS_UNKNOWN_RUN = 4,
  PROBER_STATUS_UNKNOWN_RECORD = 5,
  PROBER_STATUS_BUDGET_EXHAUSTED = 6,
  PROBER_STATUS_CORRUPT_TRACE = 7,
  PROBER_STATUS_ENGINE_FAILURE = 8,
  PROBER_STATUS_IO_FAILURE = 9,
  PROBER_STATUS_PANIC = 10,
} ProberStatus;

/**
 * A loaded run.
 */
typedef struct ProberRun ProberRun;

/**
 * A store root directory.
 */
typedef struct ProberStore ProberStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *prober_last_error(void);

/**
 * Library version as a static string.
 */
const char *prober_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void prober_string_free(char *s);

/**
 * Opens the store rooted at `root`; null means `$PROBER_DATA_DIR`.
 *
 * # Safety
 * `root` is null or a NUL-terminated string; `out` is writable.
 */
enum ProberStatus prober_store_open(const char *root, struct ProberStore **out);

/**
 * # Safety
 * `store` is null or came from [`prober_store_open`] and was not freed.
 */
void prober_store_free(struct ProberStore *store);

/**
 * JSON array of stored runs.
 *
 * # Safety
 * `store` is a live handle; `out` is writable.
 */
enum ProberStatus prober_store_list_runs(const struct ProberStore *store, char **out);

/**
 * Executes a pipeline (config JSON plus JSON Lines input for port 0) and
 * stores the trace. `run_id` may be null. The id used is returned.
 *
 * # Safety
 * String arguments are NUL-terminated (`run_id` may be null); `store` is
 * a live handle; `out_run_id` is writable.
 */
enum ProberStatus prober_run_pipeline(const struct ProberStore *store,
                                      const char *config_json,
                                      const char *input_jsonl,
                                      const char *run_id,
                                      char **out_run_id);

/**
 * # Safety
 * `store` is a live handle; `run_id` is NUL-terminated; `out` is writable.
 */
enum ProberStatus prober_run_open(const struct ProberStore *store,
                                  const char *run_id,
                                  struct ProberRun **out);

/**
 * # Safety
 * `run` is null or came from [`prober_run_open`] and was not freed.
 */
void prober_run_free(struct ProberRun *run);

/**
 * Answers a provenance request given as JSON, for example
 * `{"record":"d1/s0","kind":"int"}`, with the JSON answer. Cached answers
 * come back byte-identical.
 *
 * # Safety
 * `run` is a live handle; `request_json` is NUL-terminated; `out` is
 * writable.
 */
enum ProberStatus prober_provenance(const struct ProberRun *run,
                                    const char *request_json,
                                    char **out);

/**
 * True executions performed through this run handle so far.
 *
 * # Safety
 * `run` is null or a live handle.
 */
uint64_t prober_run_executions(const struct ProberRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBER_H */
