#ifndef SWARMCOV_H
#define SWARMCOV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of doubles written by [`swarmcov_run_state`].
 */
#define SWARMCOV_STATE_DIM 14

/**
 * Result codes. Zero is success.
 */
typedef enum SwarmcovStatus {
  SWARMCOV_STATUS_OK = 0,
  SWARMCOV_STATUS_NULL_ARGUMENT = 1,
  SWARMCOV_STATUS_INVALID_UTF8 = 2,
  SWARMCOV_STATUS_IO = 3,
  SWARMCOV_STATUS_PARSE = 4,
  SWARMCOV_STATUS_INVALID_SCENARIO = 5,
  SWARMCOV_STATUS_SOLVER = 6,
  SWARMCOV_STATUS_OUT_OF_RANGE = 7,
  SWARMCOV_STATUS_UNAVAILABLE = 8,
  SWARMCOV_STATUS_PANIC = 9,
} SwarmcovStatus;

typedef enum SwarmcovSolver {
  SWARMCOV_SOLVER_FALLBACK = 0,
  SWARMCOV_SOLVER_EXTERNAL = 1,
} SwarmcovSolver;

typedef enum SwarmcovTermination {
  SWARMCOV_TERMINATION_ALL_LANDED = 0,
  SWARMCOV_TERMINATION_STEP_CAP = 1,
  SWARMCOV_TERMINATION_ABORTED = 2,
} SwarmcovTermination;

/**
 * Opaque finished run.
 */
typedef struct SwarmcovRun SwarmcovRun;

/**
 * Opaque loaded scenario.
 */
typedef struct SwarmcovScenario SwarmcovScenario;

/**
 * Run overrides; zero or negative fields keep the scenario's values.
 */
typedef struct SwarmcovRunOptions {
  enum SwarmcovSolver solver;
  size_t max_steps;
  size_t horizon;
  /**
   * Per-solve limit in seconds.
   */
  double time_limit;
  uint64_t seed;
} SwarmcovRunOptions;

typedef struct SwarmcovSummary {
  size_t steps;
  int32_t termination;
  size_t waypoints;
  size_t waypoints_covered;
  double coverage;
  bool all_landed;
  size_t infeasible_solves;
  size_t agents;
  size_t safety_violations;
} SwarmcovSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *swarmcov_last_error(void);

/**
 * Whether the external solver was compiled in.
 */
bool swarmcov_external_available(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SwarmcovStatus swarmcov_scenario_load(const char *path, struct SwarmcovScenario **out);

/**
 * # Safety
 * `scenario` must come from [`swarmcov_scenario_load`] or be null.
 */
void swarmcov_scenario_free(struct SwarmcovScenario *scenario);

/**
 * Count validation problems; the first one is also stored as the last error.
 *
 * # Safety
 * `scenario` must be a live handle and `count` writable.
 */
enum SwarmcovStatus swarmcov_scenario_validate(const struct SwarmcovScenario *scenario,
                                               size_t *count);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
size_t swarmcov_scenario_agent_count(const struct SwarmcovScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
size_t swarmcov_scenario_waypoint_count(const struct SwarmcovScenario *scenario);

/**
 * Options with every override disabled and the fallback solver.
 */
struct SwarmcovRunOptions swarmcov_run_options_default(void);

/**
 * Run the closed loop. An aborted run still returns `Ok` with a handle;
 * check the summary's termination.
 *
 * # Safety
 * `scenario` must be a live handle, `options` readable or null, `out` writable.
 */
enum SwarmcovStatus swarmcov_run(const struct SwarmcovScenario *scenario,
                                 const struct SwarmcovRunOptions *options,
                                 struct SwarmcovRun **out);

/**
 * # Safety
 * `run` must come from [`swarmcov_run`] or be null.
 */
void swarmcov_run_free(struct SwarmcovRun *run);

/**
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum SwarmcovStatus swarmcov_run_summary(const struct SwarmcovRun *run,
                                         struct SwarmcovSummary *out);

/**
 * Copy the 14 state components of `agent` after `step` (0 = initial state)
 * into `out`.
 *
 * # Safety
 * `run` must be a live handle and `out` must hold `SWARMCOV_STATE_DIM` doubles.
 */
enum SwarmcovStatus swarmcov_run_state(const struct SwarmcovRun *run,
                                       size_t step,
                                       size_t agent,
                                       double *out);

/**
 * Write the CSV/JSON artifacts into `dir`.
 *
 * # Safety
 * `run` must be a live handle and `dir` a NUL-terminated string.
 */
enum SwarmcovStatus swarmcov_run_export(const struct SwarmcovRun *run, const char *dir);

/**
 * Return threshold `DoD_r` for the given battery and cruise figures.
 *
 * # Safety
 * `out` must be writable.
 */
enum SwarmcovStatus swarmcov_return_threshold(double dod_max,
                                              double p_dc_nom,
                                              double d_r_max,
                                              double v_cruise,
                                              double charge_capacity,
                                              double u_b_nom,
                                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWARMCOV_H */
