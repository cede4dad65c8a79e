/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef DRIVESIM_H
#define DRIVESIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsDynamics {
  DS_DYNAMICS_DEFAULT = 0,
  DS_DYNAMICS_BICYCLE = 1,
} DsDynamics;

typedef enum DsNpcPolicy {
  DS_NPC_POLICY_EXPERT = 0,
  DS_NPC_POLICY_IDM = 1,
} DsNpcPolicy;

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_IO = 3,
  DS_STATUS_FORMAT = 4,
  DS_STATUS_SIMULATION = 5,
  DS_STATUS_EPISODE_DONE = 6,
  DS_STATUS_BUFFER_TOO_SMALL = 7,
  DS_STATUS_PANIC = 8,
} DsStatus;

// Terminal class of an episode; `Running` while it continues.
typedef enum DsTerminal {
  DS_TERMINAL_RUNNING = -1,
  DS_TERMINAL_COMPLETED = 0,
  DS_TERMINAL_COLLIDED = 1,
  DS_TERMINAL_OFFROAD = 2,
  DS_TERMINAL_STUCK = 3,
} DsTerminal;

// A running episode. Owns a copy of its scenario.
typedef struct DsEnv DsEnv;

// A loaded scenario.
typedef struct DsScenario DsScenario;

// Subset of the environment configuration; unlisted settings keep their
// defaults.
typedef struct DsEnvConfig {
  enum DsDynamics dynamics;
  // Nonzero routes waypoints through the MPC tracker.
  uint8_t mpc;
  enum DsNpcPolicy npc_policy;
  double weight_offroad;
  double weight_collision;
  double weight_progress;
} DsEnvConfig;

typedef struct DsEpisodeSummary {
  enum DsTerminal terminal;
  size_t steps;
  double total_reward;
} DsEpisodeSummary;

typedef struct DsEgoState {
  double x;
  double y;
  double theta;
  double v;
} DsEgoState;

typedef struct DsStepResult {
  double reward;
  uint8_t done;
  enum DsTerminal terminal;
} DsStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *ds_last_error_message(void);

// Library version as a static string.
const char *ds_version(void);

// Length of the simulator observation vector.
size_t ds_observation_dim(void);

struct DsEnvConfig ds_env_config_default(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DsStatus ds_scenario_load(const char *path, struct DsScenario **out);

// Parse a scenario from the text of a scenario file.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum DsStatus ds_scenario_parse(const char *text, struct DsScenario **out);

// Synthesize a scenario from a map template name.
//
// # Safety
// `template_name` must be a NUL-terminated string and `out` a valid pointer.
enum DsStatus ds_scenario_synth(const char *template_name,
                                size_t npcs,
                                uint64_t seed,
                                struct DsScenario **out);

// # Safety
// `sc` must be null or a handle from this library that was not yet freed.
void ds_scenario_free(struct DsScenario *sc);

// Scenario id, valid while the handle lives. Null if `sc` is null.
//
// # Safety
// `sc` must be null or a live scenario handle.
const char *ds_scenario_id(const struct DsScenario *sc);

// # Safety
// `sc` must be a live scenario handle; `x` and `y` valid pointers.
enum DsStatus ds_scenario_goal(const struct DsScenario *sc, double *x, double *y);

// Alternative goals with the default cost table, original goal first, as
// interleaved x, y pairs. `count` receives the number of goals; if
// `capacity` (in goals) is too small nothing is written and
// `BufferTooSmall` is returned.
//
// # Safety
// `sc` must be a live scenario handle, `count` a valid pointer and `xy`
// valid for `2 * capacity` doubles (it may be null when `capacity` is 0).
enum DsStatus ds_scenario_goals(const struct DsScenario *sc,
                                double *xy,
                                size_t capacity,
                                size_t *count);

// Run a whole episode with a built-in SDC policy ("expert", "lanefollow"
// or "constvel"). A null `cfg` means defaults.
//
// # Safety
// `sc` must be a live scenario handle, `policy` a NUL-terminated string,
// `cfg` null or valid, and `out` a valid pointer.
enum DsStatus ds_simulate(const struct DsScenario *sc,
                          const char *policy,
                          const struct DsEnvConfig *cfg,
                          uint64_t seed,
                          struct DsEpisodeSummary *out);

// Start an episode on a copy of `sc`. A null `cfg` means defaults.
//
// # Safety
// `sc` must be a live scenario handle, `cfg` null or valid, `out` valid.
enum DsStatus ds_env_new(const struct DsScenario *sc,
                         const struct DsEnvConfig *cfg,
                         struct DsEnv **out);

// # Safety
// `env` must be null or a handle from `ds_env_new` that was not yet freed.
void ds_env_free(struct DsEnv *env);

// Restart the episode from the scenario's current frame.
//
// # Safety
// `env` must be a live environment handle.
enum DsStatus ds_env_reset(struct DsEnv *env);

// # Safety
// `env` must be a live environment handle and `out` a valid pointer.
enum DsStatus ds_env_ego(const struct DsEnv *env, struct DsEgoState *out);

// Steps taken so far.
//
// # Safety
// `env` must be null or a live environment handle.
size_t ds_env_step_index(const struct DsEnv *env);

// Write the simulator observation into `buf` (length `ds_observation_dim()`).
//
// # Safety
// `env` must be a live environment handle and `buf` valid for `len` doubles.
enum DsStatus ds_env_observe(const struct DsEnv *env, double *buf, size_t len);

// Apply an (acceleration, steering angle) action.
//
// # Safety
// `env` must be a live environment handle and `out` a valid pointer.
enum DsStatus ds_env_step_action(struct DsEnv *env,
                                 double accel,
                                 double steer,
                                 struct DsStepResult *out);

// Apply `n` future waypoints at 0.1 s spacing, given as interleaved
// x, y, heading triples.
//
// # Safety
// `env` must be a live environment handle, `xyh` valid for `3 * n` doubles
// and `out` a valid pointer.
enum DsStatus ds_env_step_waypoints(struct DsEnv *env,
                                    const double *xyh,
                                    size_t n,
                                    struct DsStepResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIVESIM_H */
