//! C ABI over the airways planner.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `airways_*_new`/`load`/`plan` call and released with the matching `_free`.
//! Functions return an [`AirwaysStatus`]; on failure a message describing the
//! error is available from [`airways_last_error`] on the same thread until
//! the next failing call. Panics are caught and reported as
//! `AIRWAYS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use airways::planner::{plan, PlanOutcome, Termination, Trajectory};
use airways::project::{export_trajectory, parse_project, read_trajectory, trajectory_row, LoadOptions, Project};
use airways::simulator::simulate_tracking;
use airways::Error;

/// Number of values written by [`airways_trajectory_stage`], in the order of
/// the CSV export: t, rx, ry, rz, yaw, vx, vy, vz, yaw_rate, Fx, Fy, Fz,
/// M_yaw, gimbal_yaw, gimbal_pitch, tx, ty, tz.
pub const AIRWAYS_STAGE_VALUES: usize = 18;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AirwaysStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The project or trajectory failed validation.
    Validation = 3,
    Io = 4,
    /// Planning finished without a feasible trajectory; the trajectory is
    /// still returned.
    Infeasible = 5,
    /// The tracking simulation aborted.
    Diverged = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// How the iterative planner stopped.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AirwaysTermination {
    Converged = 0,
    StepUnderflow = 1,
    MaxIterations = 2,
    Stalled = 3,
    QpFailed = 4,
}

impl From<Termination> for AirwaysTermination {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Converged => AirwaysTermination::Converged,
            Termination::StepUnderflow => AirwaysTermination::StepUnderflow,
            Termination::MaxIterations => AirwaysTermination::MaxIterations,
            Termination::Stalled => AirwaysTermination::Stalled,
            Termination::QpFailed => AirwaysTermination::QpFailed,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirwaysPlanSummary {
    pub iterations: usize,
    pub termination: AirwaysTermination,
    pub feasible: bool,
    pub max_violation: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub wall_time_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirwaysTrackingSummary {
    pub samples: usize,
    pub rms_position_error: f64,
    pub max_position_error: f64,
    pub rms_yaw_error: f64,
    pub bbox_diagonal: f64,
    pub saturated_samples: usize,
}

/// Called after every planner iteration with the merit value and step.
pub type AirwaysProgressFn = Option<unsafe extern "C" fn(user_data: *mut c_void, iteration: usize, cost: f64, step: f64)>;

/// A validated project.
pub struct AirwaysProject {
    inner: Project,
}

/// A planned or loaded trajectory.
pub struct AirwaysTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(e: &Error) -> AirwaysStatus {
    match e {
        Error::Io(_) => AirwaysStatus::Io,
        Error::Diverged(_) => AirwaysStatus::Diverged,
        Error::StageOutOfRange { .. } => AirwaysStatus::OutOfRange,
        _ => AirwaysStatus::Validation,
    }
}

/// Runs `f`, recording the message of any error or panic.
fn guard(f: impl FnOnce() -> Result<AirwaysStatus, (AirwaysStatus, String)>) -> AirwaysStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {text}"));
            AirwaysStatus::Panic
        }
    }
}

fn fail(e: Error) -> (AirwaysStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AirwaysStatus, String) {
    (AirwaysStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AirwaysStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (AirwaysStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn airways_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn airways_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a project document held in `json`. Unknown fields
/// are rejected unless `lenient` is set.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airways_project_from_json(
    json: *const c_char,
    lenient: bool,
    out: *mut *mut AirwaysProject,
) -> AirwaysStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let project = parse_project(text.as_bytes(), LoadOptions { lenient }).map_err(fail)?;
        *out = Box::into_raw(Box::new(AirwaysProject { inner: project }));
        Ok(AirwaysStatus::Ok)
    })
}

/// Loads and validates a project file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airways_project_load(path: *const c_char, out: *mut *mut AirwaysProject) -> AirwaysStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| fail(Error::Io(e)))?;
        let project = parse_project(&bytes, LoadOptions::default()).map_err(fail)?;
        *out = Box::into_raw(Box::new(AirwaysProject { inner: project }));
        Ok(AirwaysStatus::Ok)
    })
}

/// # Safety
/// `project` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn airways_project_free(project: *mut AirwaysProject) {
    if !project.is_null() {
        drop(Box::from_raw(project));
    }
}

/// Number of stages N, or 0 for a null project.
///
/// # Safety
/// `project` must be null or a live project.
#[no_mangle]
pub unsafe extern "C" fn airways_project_num_stages(project: *const AirwaysProject) -> usize {
    project.as_ref().map_or(0, |p| p.inner.num_stages())
}

/// Plans the project. On `AIRWAYS_STATUS_OK` or `AIRWAYS_STATUS_INFEASIBLE`
/// `*out` receives the trajectory; `summary` may be null.
///
/// # Safety
/// `project` must be a live project, `out` a valid pointer and `summary` null
/// or valid. `progress` is called on the calling thread.
#[no_mangle]
pub unsafe extern "C" fn airways_plan(
    project: *const AirwaysProject,
    progress: AirwaysProgressFn,
    user_data: *mut c_void,
    out: *mut *mut AirwaysTrajectory,
    summary: *mut AirwaysPlanSummary,
) -> AirwaysStatus {
    guard(|| {
        let project = project.as_ref().ok_or_else(|| null("project"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut callback = |it: &airways::planner::IqpIteration| {
            if let Some(f) = progress {
                f(user_data, it.iteration, it.cost, it.step);
            }
        };
        let outcome: PlanOutcome = plan(&project.inner, &mut callback).map_err(fail)?;
        if let Some(s) = summary.as_mut() {
            *s = AirwaysPlanSummary {
                iterations: outcome.report.iterations.len(),
                termination: outcome.report.termination.into(),
                feasible: outcome.feasibility.feasible,
                max_violation: outcome.feasibility.max_violation(),
                initial_cost: outcome.report.initial_cost,
                final_cost: outcome.report.final_cost,
                wall_time_s: outcome.report.wall_time_s,
            };
        }
        let succeeded = outcome.succeeded();
        let termination = outcome.report.termination;
        *out = Box::into_raw(Box::new(AirwaysTrajectory { inner: outcome.trajectory }));
        if succeeded {
            Ok(AirwaysStatus::Ok)
        } else {
            set_error(format!("no feasible trajectory (termination {termination:?})"));
            Ok(AirwaysStatus::Infeasible)
        }
    })
}

/// # Safety
/// `trajectory` must come from this library and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn airways_trajectory_free(trajectory: *mut AirwaysTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// # Safety
/// `trajectory` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn airways_trajectory_num_stages(trajectory: *const AirwaysTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.inner.num_stages())
}

/// Stage spacing in seconds, 0 for null.
///
/// # Safety
/// `trajectory` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn airways_trajectory_dt(trajectory: *const AirwaysTrajectory) -> f64 {
    trajectory.as_ref().map_or(0.0, |t| t.inner.dt())
}

/// Writes the `AIRWAYS_STAGE_VALUES` values of one stage into `values`.
///
/// # Safety
/// `trajectory` must be live and `values` point to room for
/// `AIRWAYS_STAGE_VALUES` doubles.
#[no_mangle]
pub unsafe extern "C" fn airways_trajectory_stage(
    trajectory: *const AirwaysTrajectory,
    stage: usize,
    values: *mut f64,
) -> AirwaysStatus {
    guard(|| {
        let t = trajectory.as_ref().ok_or_else(|| null("trajectory"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        if stage >= t.inner.num_stages() {
            return Err(fail(Error::StageOutOfRange { index: stage, stages: t.inner.num_stages() }));
        }
        let row = trajectory_row(&t.inner, stage);
        ptr::copy_nonoverlapping(row.as_ptr(), values, AIRWAYS_STAGE_VALUES);
        Ok(AirwaysStatus::Ok)
    })
}

/// Writes the trajectory CSV export to `path`.
///
/// # Safety
/// `trajectory` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn airways_trajectory_export_csv(
    trajectory: *const AirwaysTrajectory,
    path: *const c_char,
) -> AirwaysStatus {
    guard(|| {
        let t = trajectory.as_ref().ok_or_else(|| null("trajectory"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        export_trajectory(&t.inner, path).map_err(fail)?;
        Ok(AirwaysStatus::Ok)
    })
}

/// Reads a trajectory CSV export.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn airways_trajectory_read_csv(
    path: *const c_char,
    out: *mut *mut AirwaysTrajectory,
) -> AirwaysStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let t = read_trajectory(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(AirwaysTrajectory { inner: t }));
        Ok(AirwaysStatus::Ok)
    })
}

/// Flies `trajectory` with the project's platform, gains and simulation
/// settings.
///
/// # Safety
/// `project` and `trajectory` must be live and `summary` valid.
#[no_mangle]
pub unsafe extern "C" fn airways_simulate(
    project: *const AirwaysProject,
    trajectory: *const AirwaysTrajectory,
    summary: *mut AirwaysTrackingSummary,
) -> AirwaysStatus {
    guard(|| {
        let p = project.as_ref().ok_or_else(|| null("project"))?;
        let t = trajectory.as_ref().ok_or_else(|| null("trajectory"))?;
        let out = summary.as_mut().ok_or_else(|| null("summary"))?;
        let p = &p.inner;
        let log = simulate_tracking(&t.inner, &p.platform, &p.gains(), &p.simulation).map_err(fail)?;
        let s = &log.summary;
        *out = AirwaysTrackingSummary {
            samples: s.samples,
            rms_position_error: s.rms_position_error,
            max_position_error: s.max_position_error,
            rms_yaw_error: s.rms_yaw_error,
            bbox_diagonal: s.bbox_diagonal,
            saturated_samples: s.saturated_samples,
        };
        Ok(AirwaysStatus::Ok)
    })
}
