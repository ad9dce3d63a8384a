/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef AIRWAYS_H
#define AIRWAYS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of values written by [`airways_trajectory_stage`], in the order of
// the CSV export: t, rx, ry, rz, yaw, vx, vy, vz, yaw_rate, Fx, Fy, Fz,
// M_yaw, gimbal_yaw, gimbal_pitch, tx, ty, tz.
#define AIRWAYS_STAGE_VALUES 18

typedef enum AirwaysStatus {
  AIRWAYS_STATUS_OK = 0,
  // A required pointer argument was null.
  AIRWAYS_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  AIRWAYS_STATUS_INVALID_UTF8 = 2,
  // The project or trajectory failed validation.
  AIRWAYS_STATUS_VALIDATION = 3,
  AIRWAYS_STATUS_IO = 4,
  // Planning finished without a feasible trajectory; the trajectory is
  // still returned.
  AIRWAYS_STATUS_INFEASIBLE = 5,
  // The tracking simulation aborted.
  AIRWAYS_STATUS_DIVERGED = 6,
  AIRWAYS_STATUS_OUT_OF_RANGE = 7,
  AIRWAYS_STATUS_PANIC = 8,
} AirwaysStatus;

// How the iterative planner stopped.
typedef enum AirwaysTermination {
  AIRWAYS_TERMINATION_CONVERGED = 0,
  AIRWAYS_TERMINATION_STEP_UNDERFLOW = 1,
  AIRWAYS_TERMINATION_MAX_ITERATIONS = 2,
  AIRWAYS_TERMINATION_STALLED = 3,
  AIRWAYS_TERMINATION_QP_FAILED = 4,
} AirwaysTermination;

// A validated project.
typedef struct AirwaysProject AirwaysProject;

// A planned or loaded trajectory.
typedef struct AirwaysTrajectory AirwaysTrajectory;

// Called after every planner iteration with the merit value and step.
typedef void (*AirwaysProgressFn)(void *user_data, size_t iteration, double cost, double step);

typedef struct AirwaysPlanSummary {
  size_t iterations;
  enum AirwaysTermination termination;
  bool feasible;
  double max_violation;
  double initial_cost;
  double final_cost;
  double wall_time_s;
} AirwaysPlanSummary;

typedef struct AirwaysTrackingSummary {
  size_t samples;
  double rms_position_error;
  double max_position_error;
  double rms_yaw_error;
  double bbox_diagonal;
  size_t saturated_samples;
} AirwaysTrackingSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *airways_last_error(void);

// Library version as a static NUL-terminated string.
const char *airways_version(void);

// Parses and validates a project document held in `json`. Unknown fields
// are rejected unless `lenient` is set.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum AirwaysStatus airways_project_from_json(const char *json,
                                             bool lenient,
                                             struct AirwaysProject **out);

// Loads and validates a project file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AirwaysStatus airways_project_load(const char *path, struct AirwaysProject **out);

// # Safety
// `project` must come from this library and not be used afterwards. Null is
// ignored.
void airways_project_free(struct AirwaysProject *project);

// Number of stages N, or 0 for a null project.
//
// # Safety
// `project` must be null or a live project.
size_t airways_project_num_stages(const struct AirwaysProject *project);

// Plans the project. On `AIRWAYS_STATUS_OK` or `AIRWAYS_STATUS_INFEASIBLE`
// `*out` receives the trajectory; `summary` may be null.
//
// # Safety
// `project` must be a live project, `out` a valid pointer and `summary` null
// or valid. `progress` is called on the calling thread.
enum AirwaysStatus airways_plan(const struct AirwaysProject *project,
                                AirwaysProgressFn progress,
                                void *user_data,
                                struct AirwaysTrajectory **out,
                                struct AirwaysPlanSummary *summary);

// # Safety
// `trajectory` must come from this library and not be used afterwards. Null
// is ignored.
void airways_trajectory_free(struct AirwaysTrajectory *trajectory);

// # Safety
// `trajectory` must be null or live.
size_t airways_trajectory_num_stages(const struct AirwaysTrajectory *trajectory);

// Stage spacing in seconds, 0 for null.
//
// # Safety
// `trajectory` must be null or live.
double airways_trajectory_dt(const struct AirwaysTrajectory *trajectory);

// Writes the `AIRWAYS_STAGE_VALUES` values of one stage into `values`.
//
// # Safety
// `trajectory` must be live and `values` point to room for
// `AIRWAYS_STAGE_VALUES` doubles.
enum AirwaysStatus airways_trajectory_stage(const struct AirwaysTrajectory *trajectory,
                                            size_t stage,
                                            double *values);

// Writes the trajectory CSV export to `path`.
//
// # Safety
// `trajectory` must be live and `path` NUL-terminated.
enum AirwaysStatus airways_trajectory_export_csv(const struct AirwaysTrajectory *trajectory,
                                                 const char *path);

// Reads a trajectory CSV export.
//
// # Safety
// `path` must be NUL-terminated and `out` valid.
enum AirwaysStatus airways_trajectory_read_csv(const char *path, struct AirwaysTrajectory **out);

// Flies `trajectory` with the project's platform, gains and simulation
// settings.
//
// # Safety
// `project` and `trajectory` must be live and `summary` valid.
enum AirwaysStatus airways_simulate(const struct AirwaysProject *project,
                                    const struct AirwaysTrajectory *trajectory,
                                    struct AirwaysTrackingSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIRWAYS_H */
