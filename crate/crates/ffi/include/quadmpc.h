#ifndef QUADMPC_H
#define QUADMPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  QmpcStatus_Ok = 0,
  QmpcStatus_NullPointer = 1,
  QmpcStatus_Utf8Error = 2,
  QmpcStatus_InvalidConfig = 3,
  QmpcStatus_SimulationFailed = 4,
  QmpcStatus_InternalPanic = 5,
} QmpcStatus;

/**
 * Opaque configuration handle.
 */
typedef struct QmpcConfig QmpcConfig;

/**
 * Opaque controller handle driving one closed loop.
 */
typedef struct QmpcController QmpcController;

/**
 * Metrics of one closed-loop run.
 */
typedef struct {
  /**
   * Cumulative absolute position error per axis [m * steps].
   */
  double total_err[3];
  /**
   * Smallest absolute position error per axis [m].
   */
  double min_err[3];
  /**
   * Earliest time with all three errors under the threshold [s];
   * meaningful only when `has_flight_time` is true.
   */
  double flight_time;
  bool has_flight_time;
} QmpcRunMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Allocate a config with the embedded defaults. Free with
 * `qmpc_config_free`.
 */
QmpcConfig *qmpc_config_default(void);

/**
 * Load a config from a JSON file. On success writes a new handle to `out`.
 */
QmpcStatus qmpc_config_load(const char *path, QmpcConfig **out);

/**
 * Set one config key, e.g. key "controller.mode", value "\"LQR\"" or "LQR".
 */
QmpcStatus qmpc_config_set(QmpcConfig *cfg, const char *key, const char *value);

/**
 * Check every config invariant.
 */
QmpcStatus qmpc_config_validate(const QmpcConfig *cfg);

/**
 * Release a config handle. NULL is a no-op.
 */
void qmpc_config_free(QmpcConfig *cfg);

/**
 * Target position of the configured scenario at time `t`; writes 3 values.
 */
QmpcStatus qmpc_target_at(const QmpcConfig *cfg, double t, double *out_pos);

/**
 * Run the configured closed-loop scenario and fill `out` with its metrics.
 */
QmpcStatus qmpc_run_scenario(const QmpcConfig *cfg, QmpcRunMetrics *out);

/**
 * Build a controller for the configured mode. Free with
 * `qmpc_controller_free`.
 */
QmpcStatus qmpc_controller_new(const QmpcConfig *cfg, QmpcController **out);

/**
 * One controller step. `state` and `target` point at 12 doubles in the
 * order (x, y, z, phi, theta, psi, vx, vy, vz, p, q, r); writes 4 input
 * values. The handle keeps warm-start and rate-limit memory between calls.
 */
QmpcStatus qmpc_controller_step(QmpcController *ctl,
                                const double *state,
                                const double *target,
                                double t_now,
                                double *out_input);

/**
 * Release a controller handle. NULL is a no-op.
 */
void qmpc_controller_free(QmpcController *ctl);

/**
 * Static description of a status code.
 */
const char *qmpc_status_message(QmpcStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADMPC_H */
