//! Scalar summaries of a planned trajectory.

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::costs::camera_angle_error;
use crate::dynamics::InputBounds;
use crate::project::Project;
use crate::Result;

/// `sqrt(sum_i |d^4 r / dt^4|^2)` over the backward fourth differences of
/// the position.
pub fn snap_norm(trajectory: &Trajectory) -> f64 {
    let n = trajectory.num_stages();
    if n < 5 {
        return 0.0;
    }
    let dt4 = trajectory.dt().powi(4);
    let coefficients = [1.0, -4.0, 6.0, -4.0, 1.0];
    let mut total = 0.0;
    for i in 4..n {
        let mut d = nalgebra::Vector3::zeros();
        for (k, c) in coefficients.iter().enumerate() {
            d += *c * trajectory.position(i - k);
        }
        total += (d / dt4).norm_squared();
    }
    total.sqrt()
}

/// Camera angle error at every stage, rad. Degenerate stages count as 0.
pub fn camera_angle_errors(trajectory: &Trajectory) -> Vec<f64> {
    let x = &trajectory.variables;
    (0..x.num_stages())
        .map(|i| camera_angle_error(&x.position(i), x.yaw(i), x.gimbal(i), &x.target(i)).value)
        .collect()
}

pub fn mean_camera_angle_error(trajectory: &Trajectory) -> f64 {
    let errors = camera_angle_errors(trajectory);
    errors.iter().sum::<f64>() / errors.len().max(1) as f64
}

/// Largest input excursion from the box centre as a fraction of the half
/// width, over all stages and the four flat inputs.
pub fn peak_input_usage(trajectory: &Trajectory, bounds: &InputBounds) -> f64 {
    let lower = bounds.input_lower();
    let upper = bounds.input_upper();
    let mut peak = 0.0f64;
    for i in 0..trajectory.num_stages() {
        let u = trajectory.flat_input(i).to_vector();
        for k in 0..4 {
            let centre = 0.5 * (lower[k] + upper[k]);
            let half = 0.5 * (upper[k] - lower[k]);
            peak = peak.max((u[k] - centre).abs() / half);
        }
    }
    peak
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub stages: usize,
    /// s
    pub duration: f64,
    /// m
    pub path_length: f64,
    pub snap_norm: f64,
    /// Distance to each keyframe at its stage, m, in document order.
    pub keyframe_residuals: Vec<f64>,
    pub max_keyframe_residual: f64,
    /// rad
    pub mean_camera_angle_error: f64,
    pub peak_input_usage: f64,
}

pub fn trajectory_metrics(trajectory: &Trajectory, project: &Project) -> Result<TrajectoryMetrics> {
    let n = trajectory.num_stages();
    let keyframe_residuals: Vec<f64> = project
        .cost_data()
        .keyframes
        .iter()
        .filter(|k| k.stage < n)
        .map(|k| (trajectory.position(k.stage) - nalgebra::Vector3::from(k.position)).norm())
        .collect();
    let path_length = (1..n).map(|i| (trajectory.position(i) - trajectory.position(i - 1)).norm()).sum();
    Ok(TrajectoryMetrics {
        stages: n,
        duration: trajectory.duration(),
        path_length,
        snap_norm: snap_norm(trajectory),
        max_keyframe_residual: keyframe_residuals.iter().copied().fold(0.0, f64::max),
        keyframe_residuals,
        mean_camera_angle_error: mean_camera_angle_error(trajectory),
        peak_input_usage: peak_input_usage(trajectory, &project.input_bounds()?),
    })
}
