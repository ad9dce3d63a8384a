//! Request and response bodies.

use serde::{Deserialize, Serialize};

use crate::costs::camera_direction;
use crate::dynamics::PlatformParams;
use crate::planner::{trajectory_metrics, FeasibilityReport, IqpReport, PlanOutcome, Trajectory, TrajectoryMetrics};
use crate::project::{parse_trajectory_csv, simlog_row, trajectory_row, Project, SIMLOG_COLUMNS, TRAJECTORY_COLUMNS};
use crate::simulator::{ControllerGains, SimLog, SimulationSettings, TrackingSummary};
use crate::{Error, Result};

/// Most samples a simulate result carries for playback.
pub const MAX_PLAYBACK_SAMPLES: usize = 2000;

/// A trajectory as a table in the CSV column layout, plus the camera
/// direction at every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTable {
    pub dt: f64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub camera_direction: Vec<[f64; 3]>,
}

impl TrajectoryTable {
    pub fn new(trajectory: &Trajectory) -> Self {
        let mut rows = Vec::with_capacity(trajectory.num_stages());
        let mut camera = Vec::with_capacity(trajectory.num_stages());
        for i in 0..trajectory.num_stages() {
            rows.push(trajectory_row(trajectory, i).to_vec());
            let (gy, gp) = trajectory.gimbal(i);
            let d = camera_direction(trajectory.flat_state(i).yaw, gy, gp);
            camera.push([d.x, d.y, d.z]);
        }
        Self {
            dt: trajectory.dt(),
            columns: TRAJECTORY_COLUMNS.iter().map(|c| c.to_string()).collect(),
            rows,
            camera_direction: camera,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub trajectory: Trajectory,
    pub table: TrajectoryTable,
    pub iqp_report: IqpReport,
    pub feasibility: FeasibilityReport,
    pub metrics: TrajectoryMetrics,
}

impl OptimizeResult {
    pub fn new(outcome: PlanOutcome, project: &Project) -> Result<Self> {
        Ok(Self {
            table: TrajectoryTable::new(&outcome.trajectory),
            metrics: trajectory_metrics(&outcome.trajectory, project)?,
            trajectory: outcome.trajectory,
            iqp_report: outcome.report,
            feasibility: outcome.feasibility,
        })
    }
}

/// Body of `POST /api/simulate`. The trajectory comes either as the
/// `trajectory` object of an optimize result or as CSV text.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    #[serde(default)]
    pub trajectory: Option<Trajectory>,
    #[serde(default)]
    pub trajectory_csv: Option<String>,
    pub platform: PlatformParams,
    /// Defaults to the platform's default gains.
    #[serde(default)]
    pub gains: Option<ControllerGains>,
    #[serde(default)]
    pub simulation: SimulationSettings,
}

impl SimulateRequest {
    pub fn resolve(self) -> Result<(Trajectory, PlatformParams, ControllerGains, SimulationSettings)> {
        self.platform.validate()?;
        let trajectory = match (self.trajectory, self.trajectory_csv) {
            (Some(t), None) => t,
            (None, Some(csv)) => parse_trajectory_csv(csv.as_bytes())?,
            _ => {
                return Err(Error::validation(
                    "trajectory",
                    "give exactly one of trajectory and trajectory_csv",
                ))
            }
        };
        trajectory.validate()?;
        let gains = self.gains.unwrap_or_else(|| ControllerGains::default_for(&self.platform));
        gains.validate()?;
        Ok((trajectory, self.platform, gains, self.simulation))
    }
}

/// Indices of at most `max` evenly strided samples out of `len`, always
/// including the first and the last.
pub fn decimate(len: usize, max: usize) -> Vec<usize> {
    assert!(max >= 2, "need room for both endpoints");
    if len <= max {
        return (0..len).collect();
    }
    let stride = (len - 1).div_ceil(max - 1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResult {
    pub summary: TrackingSummary,
    pub total_samples: usize,
    pub columns: Vec<String>,
    /// Decimated log rows for playback.
    pub samples: Vec<Vec<f64>>,
    /// Where the full log can be downloaded as CSV.
    pub log_url: String,
}

impl SimulateResult {
    pub fn new(log: &SimLog, log_url: String) -> Self {
        Self {
            summary: log.summary.clone(),
            total_samples: log.len(),
            columns: SIMLOG_COLUMNS.iter().map(|c| c.to_string()).collect(),
            samples: decimate(log.len(), MAX_PLAYBACK_SAMPLES)
                .into_iter()
                .map(|k| simlog_row(log, k).to_vec())
                .collect(),
            log_url,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Dotted path of the offending field for validation errors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        let field = match e {
            Error::Validation { field, .. } => Some(field.clone()),
            _ => None,
        };
        Self {
            error: e.to_string(),
            field,
        }
    }
}
