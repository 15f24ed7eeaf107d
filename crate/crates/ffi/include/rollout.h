#ifndef ROLLOUT_H
#define ROLLOUT_H

/* Generated by cbindgen from rollout-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status of an FFI call. Everything but `Ok` leaves an explanation in
 * `rollout_last_error_message`.
 */
typedef enum RolloutStatusCode {
  ROLLOUT_STATUS_CODE_OK = 0,
  /**
   * Null pointer or non-UTF-8 input.
   */
  ROLLOUT_STATUS_CODE_INVALID_ARGUMENT = 1,
  /**
   * Input string is not valid JSON for the expected shape.
   */
  ROLLOUT_STATUS_CODE_PARSE_ERROR = 2,
  ROLLOUT_STATUS_CODE_INVALID_CONFIG = 3,
  ROLLOUT_STATUS_CODE_INVALID_QUERY = 4,
  ROLLOUT_STATUS_CODE_INSUFFICIENT_DATA = 5,
  ROLLOUT_STATUS_CODE_DATA_QUALITY = 6,
  /**
   * The rollout already reverted or completed.
   */
  ROLLOUT_STATUS_CODE_TERMINAL = 7,
  /**
   * Snapshot does not match this plan or schema.
   */
  ROLLOUT_STATUS_CODE_SNAPSHOT_MISMATCH = 8,
  ROLLOUT_STATUS_CODE_INTERNAL = 9,
} RolloutStatusCode;

/**
 * Which arm a unit lands in at the current split.
 */
typedef enum RolloutAssignment {
  ROLLOUT_ASSIGNMENT_UNTREATED = 0,
  ROLLOUT_ASSIGNMENT_TREATMENT = 1,
  ROLLOUT_ASSIGNMENT_CONTROL = 2,
} RolloutAssignment;

/**
 * A rollout plan bound to its evolving state.
 */
typedef struct RolloutController RolloutController;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread. Never null.
 */
const char *rollout_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rollout_version(void);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have been returned by this library and not freed before.
 */
void rollout_string_free(char *s);

/**
 * Create a controller from a plan (JSON) with a fresh state at the plan's
 * initial treatment percentage.
 *
 * # Safety
 * `plan_json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum RolloutStatusCode rollout_controller_new(const char *plan_json,
                                              struct RolloutController **out);

/**
 * Create a controller by resuming a snapshot produced by
 * `rollout_controller_snapshot` under the same plan.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be a valid pointer.
 */
enum RolloutStatusCode rollout_controller_restore(const char *plan_json,
                                                  const char *snapshot_json,
                                                  struct RolloutController **out);

/**
 * Release a controller. Null is a no-op.
 *
 * # Safety
 * `c` must have come from this library and not be freed twice.
 */
void rollout_controller_free(struct RolloutController *c);

/**
 * Advance the rollout by one hour. `events_json` is a JSON array of
 * `{metric, unit_id, group, value}` records for that hour; null means the
 * hour passed without observations. On success `decision_out` receives the
 * decision as JSON (for example `"stay"` or `{"ramp_to":{"pct":0.2}}`).
 *
 * # Safety
 * `c` must be a live controller; `decision_out`, when non-null, must be a
 * valid pointer.
 */
enum RolloutStatusCode rollout_controller_step(struct RolloutController *c,
                                               uint32_t hour,
                                               const char *events_json,
                                               char **decision_out);

/**
 * Serialize the controller state as a snapshot (JSON).
 *
 * # Safety
 * `c` must be a live controller; `snapshot_out` must be a valid pointer.
 */
enum RolloutStatusCode rollout_controller_snapshot(const struct RolloutController *c,
                                                   char **snapshot_out);

/**
 * Hashed sticky assignment of one unit at the current split.
 *
 * # Safety
 * `c` must be a live controller; `unit_id` a NUL-terminated string;
 * `assignment_out` a valid pointer.
 */
enum RolloutStatusCode rollout_controller_assign(const struct RolloutController *c,
                                                 const char *unit_id,
                                                 enum RolloutAssignment *assignment_out);

/**
 * Current treatment share in [0, 1].
 *
 * # Safety
 * `c` must be a live controller; `pct_out` a valid pointer.
 */
enum RolloutStatusCode rollout_controller_treatment_pct(const struct RolloutController *c,
                                                        double *pct_out);

/**
 * Sample size / power queries. Input is a `PowerQuery` (JSON), for example
 * `{"delta":0.05,"alpha":0.05,"v_ctrl":0.21,"v_trt":0.21,"target":{"beta":0.1}}`;
 * output is the matching `PowerAnswer` (JSON).
 *
 * # Safety
 * `query_json` must be a NUL-terminated string; `answer_out` a valid pointer.
 */
enum RolloutStatusCode rollout_power_query(const char *query_json, char **answer_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROLLOUT_H */
