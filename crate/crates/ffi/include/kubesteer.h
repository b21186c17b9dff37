#ifndef KUBESTEER_H
#define KUBESTEER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_ARGUMENT = 1,
  KS_STATUS_INVALID_UTF8 = 2,
  KS_STATUS_INVALID_ARGUMENT = 3,
  KS_STATUS_CONFIG = 4,
  KS_STATUS_SESSION_BUSY = 5,
  KS_STATUS_NO_PENDING_INTERRUPT = 6,
  KS_STATUS_CHECKPOINT_MISSING = 7,
  KS_STATUS_NOT_FOUND = 8,
  KS_STATUS_ENGINE_FAULT = 9,
  KS_STATUS_PANIC = 10,
} KsStatus;

// Opaque handle to a running system.
typedef struct KsSystem KsSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a system from `KUBESTEER_*` environment variables.
//
// # Safety
// `out` must be valid for writes.
enum KsStatus ks_system_new_from_env(struct KsSystem **out);

// Builds a system driven by a scripted scenario (built-in name or file).
// `data_dir` may be null for in-memory storage.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be valid for writes.
enum KsStatus ks_system_new_scenario(const char *scenario_name,
                                     const char *data_dir,
                                     struct KsSystem **out);

// Releases a system handle. Null is ignored.
//
// # Safety
// `sys` must be null or a handle not yet freed.
void ks_system_free(struct KsSystem *sys);

// Runs one turn. `out_json` receives `{kind, content, status, step_counter, pending_interrupt}`.
//
// # Safety
// `sys` must be a live handle; strings NUL-terminated; `out_json` valid for writes.
enum KsStatus ks_run_turn(const struct KsSystem *sys,
                          const char *session_id,
                          const char *query,
                          const char *role,
                          char **out_json);

// Answers a session's pending interrupt and continues it.
//
// # Safety
// As for [`ks_run_turn`].
enum KsStatus ks_resume(const struct KsSystem *sys,
                        const char *session_id,
                        const char *input,
                        char **out_json);

// Latest persisted state of a session.
//
// # Safety
// As for [`ks_run_turn`].
enum KsStatus ks_session(const struct KsSystem *sys, const char *session_id, char **out_json);

// `{status, components}`.
//
// # Safety
// As for [`ks_run_turn`].
enum KsStatus ks_health(const struct KsSystem *sys, char **out_json);

// Registered tools, optionally for one agent (`agent` may be null).
//
// # Safety
// As for [`ks_run_turn`].
enum KsStatus ks_list_tools(const struct KsSystem *sys, const char *agent, char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void ks_string_free(char *s);

// Message for the last failure on this thread, or null. Valid until the
// next call on the same thread; do not free.
const char *ks_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KUBESTEER_H */
