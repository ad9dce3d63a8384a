//! From a project to a flyable trajectory.
//!
//! The decision vector is the stacked per-stage state, input, gimbal and
//! target variables. Dynamics and the initial state are hard equality rows;
//! input, gimbal and obstacle limits are inequality rows; keyframes are soft
//! and live in the objective. Quadratic objectives are solved once, anything
//! else goes through the iterative QP loop with a backtracking line search.

mod iqp;
mod metrics;
mod problem;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::costs::{GimbalLimits, StackedVariables, GIMBAL_PITCH_RATE, GIMBAL_YAW, GIMBAL_YAW_RATE, STRIDE};
use crate::dynamics::{DiscreteDynamics, FlatInput, FlatState, InputBounds};
use crate::project::Project;
use crate::{Error, Result};

pub use iqp::{plan, plan_iqp, plan_iqp_with_progress, plan_linear, IqpIteration, IqpReport, PlanOutcome, Termination};
pub use metrics::{
    camera_angle_errors, mean_camera_angle_error, peak_input_usage, snap_norm, trajectory_metrics, TrajectoryMetrics,
};
pub use problem::{build_problem, initial_guess, initial_state, linearize_obstacle, ObstacleRow, ProblemLayout};

/// Tolerance used to label a trajectory feasible.
pub const FEASIBILITY_TOL: f64 = 1e-5;

fn default_margin() -> f64 {
    0.2
}

/// Static sphere the vehicle must stay outside of, with a safety margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 3],
    /// m
    pub radius: f64,
    /// m, added to the radius
    #[serde(default = "default_margin")]
    pub margin: f64,
}

impl Obstacle {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    /// How far `p` is inside the inflated sphere (0 when outside).
    pub fn violation(&self, p: &Vector3<f64>) -> f64 {
        (self.radius + self.margin - (p - self.center()).norm()).max(0.0)
    }
}

/// Settings of the iterative QP loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IqpSettings {
    pub max_iterations: usize,
    /// Stop when the accepted relative cost decrease falls below this.
    pub min_relative_decrease: f64,
    /// Smallest line-search step before giving up.
    pub min_step: f64,
    /// Line-search backtracking factor.
    pub backtrack: f64,
    /// Weight of the obstacle penetration in the merit function.
    pub obstacle_penalty: f64,
    /// Weight of `1/2 |X - X_ref|^2` added to every QP.
    pub proximal_weight: f64,
}

impl Default for IqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            min_relative_decrease: 1e-4,
            min_step: 1e-4,
            backtrack: 0.5,
            obstacle_penalty: 1e6,
            proximal_weight: 1e-6,
        }
    }
}

/// A planned trajectory: the stacked decision vector at the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub variables: StackedVariables,
}

impl Trajectory {
    pub fn new(variables: StackedVariables) -> Self {
        Self { variables }
    }

    pub fn num_stages(&self) -> usize {
        self.variables.num_stages()
    }

    /// Shape and finiteness checks for trajectories that did not come from
    /// the planner.
    pub fn validate(&self) -> Result<()> {
        let x = &self.variables;
        if x.num_stages() < 2 {
            return Err(Error::validation("trajectory.num_stages", "needs at least 2 stages"));
        }
        if !(x.dt().is_finite() && x.dt() > 0.0) {
            return Err(Error::validation("trajectory.dt", "must be finite and > 0"));
        }
        if x.len() != x.num_stages() * STRIDE {
            return Err(Error::validation(
                "trajectory.data",
                format!("expected {} values, got {}", x.num_stages() * STRIDE, x.len()),
            ));
        }
        if !x.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::validation("trajectory.data", "all values must be finite"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.variables.dt()
    }

    pub fn duration(&self) -> f64 {
        (self.num_stages().saturating_sub(1)) as f64 * self.dt()
    }

    pub fn flat_state(&self, stage: usize) -> FlatState {
        self.variables.flat_state(stage)
    }

    pub fn flat_input(&self, stage: usize) -> FlatInput {
        self.variables.flat_input(stage)
    }

    pub fn position(&self, stage: usize) -> Vector3<f64> {
        self.variables.position(stage)
    }

    pub fn target(&self, stage: usize) -> Vector3<f64> {
        self.variables.target(stage)
    }

    /// (yaw, pitch)
    pub fn gimbal(&self, stage: usize) -> (f64, f64) {
        self.variables.gimbal(stage)
    }

    pub fn gimbal_rates(&self, stage: usize) -> (f64, f64) {
        let s = self.variables.stage(stage);
        (s[GIMBAL_YAW_RATE], s[GIMBAL_PITCH_RATE])
    }
}

/// Everything the feasibility check needs besides the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLimits {
    pub dynamics: DiscreteDynamics,
    pub inputs: InputBounds,
    pub gimbal: Option<GimbalLimits>,
}

impl PlanLimits {
    pub fn from_project(project: &Project) -> Result<Self> {
        Ok(Self {
            dynamics: project.dynamics()?,
            inputs: project.input_bounds()?,
            gimbal: project.gimbal_limits,
        })
    }
}

/// Largest violations found at one stage. Dynamics residuals are attributed
/// to the stage the transition starts from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageViolation {
    pub stage: usize,
    pub dynamics: f64,
    pub input: f64,
    pub gimbal: f64,
    pub obstacle: f64,
}

impl StageViolation {
    pub fn max(&self) -> f64 {
        self.dynamics.max(self.input).max(self.gimbal).max(self.obstacle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub tolerance: f64,
    pub max_dynamics: f64,
    pub max_input: f64,
    pub max_gimbal: f64,
    pub max_obstacle: f64,
    /// Stage of the largest violation of any kind.
    pub worst_stage: usize,
    pub stages: Vec<StageViolation>,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.max_dynamics.max(self.max_input).max(self.max_gimbal).max(self.max_obstacle)
    }
}

fn box_violation(v: f64, lo: f64, hi: f64) -> f64 {
    (v - hi).max(lo - v).max(0.0)
}

/// Checks dynamics, input boxes, gimbal boxes and obstacle clearance stage
/// by stage. The obstacle check is boundary inclusive.
pub fn feasibility_report(trajectory: &Trajectory, limits: &PlanLimits, obstacles: &[Obstacle]) -> FeasibilityReport {
    let n = trajectory.num_stages();
    let x = &trajectory.variables;
    let dt = trajectory.dt();
    let lower = limits.inputs.input_lower();
    let upper = limits.inputs.input_upper();
    let mut stages = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = StageViolation { stage: i, ..Default::default() };
        if i + 1 < n {
            let predicted = limits
                .dynamics
                .propagate(&x.flat_state(i).to_vector(), &x.flat_input(i).to_vector());
            v.dynamics = (x.flat_state(i + 1).to_vector() - predicted).amax();
            let (gy, gp) = x.gimbal(i);
            let (ry, rp) = trajectory.gimbal_rates(i);
            let (ny, np) = x.gimbal(i + 1);
            v.dynamics = v
                .dynamics
                .max((ny - gy - dt * ry).abs())
                .max((np - gp - dt * rp).abs());
        }
        let u = x.flat_input(i).to_vector();
        for k in 0..4 {
            v.input = v.input.max(box_violation(u[k], lower[k], upper[k]));
        }
        if let Some(g) = &limits.gimbal {
            let (gy, gp) = x.gimbal(i);
            let (ry, rp) = trajectory.gimbal_rates(i);
            v.gimbal = box_violation(gy, g.yaw_range[0], g.yaw_range[1])
                .max(box_violation(gp, g.pitch_range[0], g.pitch_range[1]))
                .max(box_violation(ry, g.rate_range[0], g.rate_range[1]))
                .max(box_violation(rp, g.rate_range[0], g.rate_range[1]));
        }
        let p = x.position(i);
        for o in obstacles {
            v.obstacle = v.obstacle.max(o.violation(&p));
        }
        stages.push(v);
    }
    let fold = |f: fn(&StageViolation) -> f64| stages.iter().map(f).fold(0.0, f64::max);
    let max_dynamics = fold(|s| s.dynamics);
    let max_input = fold(|s| s.input);
    let max_gimbal = fold(|s| s.gimbal);
    let max_obstacle = fold(|s| s.obstacle);
    let worst_stage = stages
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, s)| if s.max() > bv { (i, s.max()) } else { (bi, bv) })
        .0;
    let all_finite = x.as_slice().iter().all(|v| v.is_finite());
    let report = FeasibilityReport {
        feasible: false,
        tolerance: FEASIBILITY_TOL,
        max_dynamics,
        max_input,
        max_gimbal,
        max_obstacle,
        worst_stage,
        stages,
    };
    FeasibilityReport {
        feasible: all_finite && report.max_violation() <= FEASIBILITY_TOL,
        ..report
    }
}

/// Index of the first gimbal variable of `stage`.
pub(crate) fn gimbal_index(stage: usize) -> usize {
    StackedVariables::index(stage, GIMBAL_YAW)
}
