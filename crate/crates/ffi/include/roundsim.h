#ifndef ROUNDSIM_H
#define ROUNDSIM_H

/* Generated by cbindgen from the roundsim-ffi sources. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Action indices accepted by [`rb_env_step`].
 */
#define RB_ACTION_ACCELERATE 0

#define RB_ACTION_BRAKE 1

#define RB_ACTION_MAINTAIN 2

/**
 * Length of the visual observation: stacked frames of three 84x84 layers,
 * channel-major, values 0 or 1.
 */
#define RB_VISUAL_LEN 84672

/**
 * Length of the numeric observation.
 */
#define RB_NUMERIC_LEN 4

/**
 * Result of every fallible call.
 */
typedef enum RbStatus {
  RB_STATUS_OK = 0,
  RB_STATUS_NULL_POINTER = 1,
  RB_STATUS_INVALID_ARGUMENT = 2,
  RB_STATUS_CONFIG = 3,
  RB_STATUS_SIMULATION = 4,
  RB_STATUS_NETWORK = 5,
  RB_STATUS_IO = 6,
  RB_STATUS_BUFFER_TOO_SMALL = 7,
  RB_STATUS_PANIC = 8,
} RbStatus;

/**
 * Terminal state of an agent, mirroring the simulator's statuses.
 */
typedef enum RbAgentStatus {
  RB_AGENT_STATUS_ACTIVE = 0,
  RB_AGENT_STATUS_REACHED_GOAL = 1,
  RB_AGENT_STATUS_CRASHED = 2,
  RB_AGENT_STATUS_TIMED_OUT = 3,
} RbAgentStatus;

/**
 * Opaque simulator handle.
 */
typedef struct RbEnv RbEnv;

/**
 * Opaque network handle.
 */
typedef struct RbNet RbNet;

/**
 * What happened to one agent during the last step.
 */
typedef struct RbOutcome {
  uint64_t id;
  enum RbAgentStatus status;
  /**
   * Total reward of the step.
   */
  double reward;
  double speed;
  /**
   * Arc length along the route (m).
   */
  double s;
} RbOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap` bytes. Returns the length of
 * the full message without the terminator; an empty message means the last
 * call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t rb_last_error(char *buf, size_t cap);

/**
 * Creates a simulator from a JSON run configuration (null for defaults).
 * The world starts empty until [`rb_env_reset`] is called.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum RbStatus rb_env_new(const char *config_json, struct RbEnv **out);

/**
 * Releases a simulator; null is ignored.
 *
 * # Safety
 * `env` must be null or a handle from [`rb_env_new`] not yet freed.
 */
void rb_env_free(struct RbEnv *env);

/**
 * Restarts the world at t = 0 with the initial vehicles.
 *
 * # Safety
 * `env` must be a live handle.
 */
enum RbStatus rb_env_reset(struct RbEnv *env);

/**
 * Writes the ids of the vehicles on the road, oldest first. `out_len`
 * receives the count; if it exceeds `cap` nothing is written and
 * `RB_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `env` must be a live handle, `ids` must hold `cap` values, `out_len`
 * must be valid.
 */
enum RbStatus rb_env_agents(const struct RbEnv *env, uint64_t *ids, size_t cap, size_t *out_len);

/**
 * Advances the world by one tick. `ids[i]` performs `actions[i]`; every
 * vehicle on the road needs exactly one action. The outcomes are kept for
 * [`rb_env_outcomes`] and `out_count` receives their number.
 *
 * # Safety
 * `ids` and `actions` must hold `n` values; `env` and `out_count` must be
 * valid.
 */
enum RbStatus rb_env_step(struct RbEnv *env,
                          const uint64_t *ids,
                          const uint32_t *actions,
                          size_t n,
                          size_t *out_count);

/**
 * Copies the outcomes of the last step; same size protocol as
 * [`rb_env_agents`].
 *
 * # Safety
 * `env` must be a live handle, `buf` must hold `cap` values, `out_len`
 * must be valid.
 */
enum RbStatus rb_env_outcomes(const struct RbEnv *env,
                              struct RbOutcome *buf,
                              size_t cap,
                              size_t *out_len);

/**
 * Writes the observation of an active vehicle. `visual` needs
 * `RB_VISUAL_LEN` values (or may be null when `visual_len` is 0 to skip
 * it) and `numeric` needs `RB_NUMERIC_LEN`.
 *
 * # Safety
 * Buffers must hold the stated number of values.
 */
enum RbStatus rb_env_observation(struct RbEnv *env,
                                 uint64_t id,
                                 double *visual,
                                 size_t visual_len,
                                 double *numeric,
                                 size_t numeric_len);

/**
 * Simulated time in seconds since the last reset.
 *
 * # Safety
 * `env` and `out` must be valid.
 */
enum RbStatus rb_env_sim_time(const struct RbEnv *env, double *out);

/**
 * Creates a freshly initialized network whose shape follows the run
 * configuration (null for defaults).
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be valid.
 */
enum RbStatus rb_net_new(const char *config_json, uint64_t seed, struct RbNet **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum RbStatus rb_net_load(const char *path, struct RbNet **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum RbStatus rb_net_save(const struct RbNet *net, const char *path);

/**
 * Releases a network; null is ignored.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
void rb_net_free(struct RbNet *net);

/**
 * Number of trainable parameters.
 *
 * # Safety
 * `net` and `out` must be valid.
 */
enum RbStatus rb_net_param_count(const struct RbNet *net, size_t *out);

/**
 * Lengths of the inputs the network expects; the visual length is 0 for a
 * network without the convolutional trunk.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RbStatus rb_net_input_sizes(const struct RbNet *net, size_t *visual_len, size_t *numeric_len);

/**
 * Evaluates the network: `logits` receives one value per action (3) and
 * `value` the state value.
 *
 * # Safety
 * Buffers must hold the stated number of values; `value` must be valid.
 */
enum RbStatus rb_net_forward(const struct RbNet *net,
                             const double *visual,
                             size_t visual_len,
                             const double *numeric,
                             size_t numeric_len,
                             double *logits,
                             size_t logits_len,
                             double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUNDSIM_H */
