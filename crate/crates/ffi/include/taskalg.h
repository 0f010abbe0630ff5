#ifndef TASKALG_H
#define TASKALG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TaskalgPathClass {
  TASKALG_PATH_CLASS_PURE = 0,
  TASKALG_PATH_CLASS_MINIMUM_VIOLATION = 1,
  TASKALG_PATH_CLASS_PRIORITIZED_SAFETY = 2,
  TASKALG_PATH_CLASS_SAFETY_ONLY = 3,
  TASKALG_PATH_CLASS_VIOLATING = 4,
  TASKALG_PATH_CLASS_NON_TERMINATING = 5,
} TaskalgPathClass;

typedef enum TaskalgSemantics {
  TASKALG_SEMANTICS_MINIMUM_VIOLATION = 0,
  TASKALG_SEMANTICS_PRIORITIZED_SAFETY = 1,
} TaskalgSemantics;

typedef enum TaskalgStatus {
  TASKALG_STATUS_OK = 0,
  TASKALG_STATUS_NULL_ARGUMENT = 1,
  TASKALG_STATUS_INVALID_UTF8 = 2,
  TASKALG_STATUS_INVALID_ENVIRONMENT = 3,
  TASKALG_STATUS_INVALID_CONFIG = 4,
  TASKALG_STATUS_PARSE = 5,
  TASKALG_STATUS_UNKNOWN_PROPOSITION = 6,
  TASKALG_STATUS_ENVIRONMENT_DISCONNECTED = 7,
  TASKALG_STATUS_NON_CONVERGENCE = 8,
  TASKALG_STATUS_INCOMPATIBLE_TABLES = 9,
  TASKALG_STATUS_MISSING_TASK = 10,
  TASKALG_STATUS_IO = 11,
  TASKALG_STATUS_FORMAT = 12,
  TASKALG_STATUS_OTHER = 13,
  TASKALG_STATUS_PANIC = 14,
} TaskalgStatus;

/**
 * A labeled grid environment.
 */
typedef struct TaskalgEnv TaskalgEnv;

/**
 * Trained task tables for one environment and penalty configuration.
 */
typedef struct TaskalgLibrary TaskalgLibrary;

/**
 * One greedy run and, once classified, its class.
 */
typedef struct TaskalgReport TaskalgReport;

/**
 * A task table, trained or composed.
 */
typedef struct TaskalgTable TaskalgTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *taskalg_last_error(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void taskalg_string_free(char *s);

/**
 * Parses an environment from its JSON description.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum TaskalgStatus taskalg_env_from_json(const char *json, struct TaskalgEnv **out);

/**
 * One of the bundled environments: `"example"` or `"barrier"`.
 *
 * # Safety
 * `name` must be a nul-terminated string; `out` must be writable.
 */
enum TaskalgStatus taskalg_env_builtin(const char *name, struct TaskalgEnv **out);

/**
 * # Safety
 * `env` must come from this library and not have been freed.
 */
void taskalg_env_free(struct TaskalgEnv *env);

/**
 * # Safety
 * `env` must be a live handle; the out pointers may be null.
 */
enum TaskalgStatus taskalg_env_dims(const struct TaskalgEnv *env,
                                    size_t *width,
                                    size_t *height,
                                    size_t *regions);

/**
 * The penalty multiplier derived from the environment.
 *
 * # Safety
 * `env` must be a live handle; `out` must be writable.
 */
enum TaskalgStatus taskalg_penalty_multiplier(const struct TaskalgEnv *env, uint32_t *out);

/**
 * An empty library with default step and goal rewards. `c_p == 0` derives
 * the multiplier from the environment.
 *
 * # Safety
 * `env` must be a live handle; `out` must be writable.
 */
enum TaskalgStatus taskalg_library_new(const struct TaskalgEnv *env,
                                       uint32_t c_p,
                                       struct TaskalgLibrary **out);

/**
 * # Safety
 * `lib` must come from this library and not have been freed.
 */
void taskalg_library_free(struct TaskalgLibrary *lib);

/**
 * Value-iterates one task into the library. `key` is `p`, `not-p`,
 * `not-p+q`, `U`, `EMPTY`, or `basis` for the boundary tables and every
 * proposition. `k > 0` also trains safety slices.
 *
 * # Safety
 * Handles must be live; `key` must be a nul-terminated string.
 */
enum TaskalgStatus taskalg_library_train(struct TaskalgLibrary *lib,
                                         const struct TaskalgEnv *env,
                                         const char *key,
                                         size_t k);

/**
 * Whether the library holds `key`.
 *
 * # Safety
 * `lib` must be live; `key` must be a nul-terminated string.
 */
enum TaskalgStatus taskalg_library_contains(const struct TaskalgLibrary *lib,
                                            const char *key,
                                            bool *out);

/**
 * Composes `formula` from library tables without further training.
 *
 * # Safety
 * `lib` must be live; `formula` nul-terminated; `out` writable.
 */
enum TaskalgStatus taskalg_compile(const struct TaskalgLibrary *lib,
                                   const char *formula,
                                   enum TaskalgSemantics semantics,
                                   struct TaskalgTable **out);

/**
 * # Safety
 * `table` must come from this library and not have been freed.
 */
void taskalg_table_free(struct TaskalgTable *table);

/**
 * Greedy value `max_a Q(cell, g, a)` of the first slice.
 *
 * # Safety
 * `table` must be live; `out` writable.
 */
enum TaskalgStatus taskalg_table_value(const struct TaskalgTable *table,
                                       size_t x,
                                       size_t y,
                                       size_t region,
                                       double *out);

/**
 * # Safety
 * `table` must be live; `path` nul-terminated.
 */
enum TaskalgStatus taskalg_table_save(const struct TaskalgTable *table, const char *path);

/**
 * # Safety
 * `path` must be nul-terminated; `out` writable.
 */
enum TaskalgStatus taskalg_table_load(const char *path, struct TaskalgTable **out);

/**
 * Follows the table's greedy policy from `(x, y)`. `max_steps == 0` uses
 * the default bound for the table's multiplier.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum TaskalgStatus taskalg_rollout(const struct TaskalgEnv *env,
                                   const struct TaskalgTable *table,
                                   size_t x,
                                   size_t y,
                                   size_t max_steps,
                                   struct TaskalgReport **out);

/**
 * # Safety
 * `report` must come from this library and not have been freed.
 */
void taskalg_report_free(struct TaskalgReport *report);

/**
 * # Safety
 * `report` must be live; out pointers may be null.
 */
enum TaskalgStatus taskalg_report_summary(const struct TaskalgReport *report,
                                          bool *terminated,
                                          bool *chatter,
                                          size_t *steps);

/**
 * Classifies the run against `formula` and keeps the result on the report.
 *
 * # Safety
 * Handles must be live; `formula` nul-terminated; `out` writable.
 */
enum TaskalgStatus taskalg_report_classify(struct TaskalgReport *report,
                                           const struct TaskalgEnv *env,
                                           const char *formula,
                                           enum TaskalgSemantics semantics,
                                           enum TaskalgPathClass *out);

/**
 * The structured run report as JSON. Free with [`taskalg_string_free`].
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum TaskalgStatus taskalg_report_json(const struct TaskalgReport *report,
                                       const struct TaskalgEnv *env,
                                       char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TASKALG_H */
