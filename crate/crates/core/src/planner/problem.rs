//! Initial guess and QP assembly.

use nalgebra::Vector3;

use super::{gimbal_index, Obstacle};
use crate::costs::{total_cost, StackedVariables, FORCE, POSITION};
use crate::dynamics::{FlatInput, FlatState};
use crate::project::Project;
use crate::qp::SparseQP;
use crate::sparse::Triplets;
use crate::{Error, Result};

/// Row counts of the assembled QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemLayout {
    pub stages: usize,
    pub initial_pin_rows: usize,
    pub dynamics_rows: usize,
    pub gimbal_rows: usize,
    pub input_box_rows: usize,
    pub gimbal_box_rows: usize,
    pub obstacle_rows: usize,
}

impl ProblemLayout {
    pub fn new(project: &Project) -> Self {
        let n = project.num_stages();
        let gimbal_boxes = if project.gimbal_limits.is_some() { 8 * n } else { 0 };
        Self {
            stages: n,
            initial_pin_rows: 8,
            dynamics_rows: 8 * (n - 1),
            gimbal_rows: 2 * (n - 1),
            input_box_rows: 8 * n,
            gimbal_box_rows: gimbal_boxes,
            obstacle_rows: project.obstacles.len() * (n - 1),
        }
    }

    pub fn eq_rows(&self) -> usize {
        self.initial_pin_rows + self.dynamics_rows + self.gimbal_rows
    }

    pub fn ineq_rows(&self) -> usize {
        self.input_box_rows + self.gimbal_box_rows + self.obstacle_rows
    }
}

/// Piecewise-linear interpolation over stage indices, held constant before
/// the first and after the last anchor. Later anchors win on equal stages.
fn interpolate(anchors: &[(usize, Vector3<f64>)], stages: usize) -> Vec<Vector3<f64>> {
    let mut sorted = anchors.to_vec();
    sorted.sort_by_key(|a| a.0);
    sorted.dedup_by(|later, earlier| {
        if later.0 == earlier.0 {
            earlier.1 = later.1;
            true
        } else {
            false
        }
    });
    (0..stages)
        .map(|i| {
            let k = sorted.partition_point(|a| a.0 <= i);
            if k == 0 {
                sorted[0].1
            } else if k == sorted.len() {
                sorted[k - 1].1
            } else {
                let (s0, p0) = sorted[k - 1];
                let (s1, p1) = sorted[k];
                let f = (i - s0) as f64 / (s1 - s0) as f64;
                p0 + (p1 - p0) * f
            }
        })
        .collect()
}

fn keyframe_path(project: &Project) -> Result<Vec<Vector3<f64>>> {
    if project.keyframes.len() < 2 {
        return Err(Error::validation("keyframes", "at least 2 keyframes are required"));
    }
    let data = project.cost_data();
    let anchors: Vec<_> = data.keyframes.iter().map(|k| (k.stage, Vector3::from(k.position))).collect();
    Ok(interpolate(&anchors, project.num_stages()))
}

/// The pinned start: first keyframe position (held backward when it is not
/// at stage 0), the project's initial yaw, and either the given initial
/// velocity or the finite-difference velocity of the keyframe path.
pub fn initial_state(project: &Project) -> Result<FlatState> {
    let path = keyframe_path(project)?;
    let velocity = match project.initial_velocity {
        Some(v) => Vector3::from(v),
        None => (path[1] - path[0]) / project.dt,
    };
    Ok(FlatState {
        position: path[0],
        yaw: project.initial_yaw,
        velocity,
        yaw_rate: 0.0,
    })
}

fn wrap_near(angle: f64, reference: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    angle - ((angle - reference) / tau).round() * tau
}

/// Gimbal angles that point the camera from `from` at `to` for vehicle yaw `yaw`.
fn pointing_angles(from: &Vector3<f64>, to: &Vector3<f64>, yaw: f64) -> (f64, f64) {
    let d = to - from;
    let horizontal = d.x.hypot(d.y);
    if d.norm() < 1e-9 {
        return (0.0, 0.0);
    }
    let gimbal_yaw = if horizontal < 1e-12 { 0.0 } else { d.y.atan2(d.x) - yaw };
    (gimbal_yaw, d.z.atan2(horizontal))
}

/// Interpolates keyframes and keytargets, then rolls the discrete dynamics
/// forward under a clamped tracking law so that every equality row holds
/// exactly. Straight constant-speed segments are reproduced exactly.
pub fn initial_guess(project: &Project) -> Result<StackedVariables> {
    let n = project.num_stages();
    let dt = project.dt;
    let path = keyframe_path(project)?;
    let bounds = project.input_bounds()?;
    let dynamics = project.dynamics()?;
    let params = &project.platform;
    let mut x = StackedVariables::zeros(n, dt);

    let data = project.cost_data();
    let heading = Vector3::new(project.initial_yaw.cos(), project.initial_yaw.sin(), 0.0);
    let targets = if data.keytargets.is_empty() {
        path.iter().map(|p| p + heading).collect()
    } else {
        let anchors: Vec<_> = data.keytargets.iter().map(|k| (k.stage, Vector3::from(k.position))).collect();
        interpolate(&anchors, n)
    };

    let desired_velocity = |i: usize| -> Vector3<f64> {
        if n < 2 {
            return Vector3::zeros();
        }
        let i = i.min(n - 2);
        (path[i + 1] - path[i]) / dt
    };
    let (kp, kd) = (4.0, 4.0);
    let lower = bounds.input_lower();
    let upper = bounds.input_upper();
    let gravity = Vector3::new(0.0, 0.0, params.gravity);
    let mut state = initial_state(project)?;
    for i in 0..n {
        x.set_flat_state(i, &state);
        x.set_vec3(i, crate::costs::TARGET, &targets[i]);
        let input = if i + 1 < n {
            let feedforward = (desired_velocity(i + 1) - desired_velocity(i)) / dt;
            let accel = feedforward + kp * (path[i] - state.position) + kd * (desired_velocity(i) - state.velocity);
            let mut force = params.mass * (accel + gravity);
            for k in 0..3 {
                force[k] = force[k].clamp(lower[k], upper[k]);
            }
            FlatInput { force, yaw_moment: 0.0 }
        } else {
            FlatInput { force: params.hover_force(), yaw_moment: 0.0 }
        };
        x.set_flat_input(i, &input);
        if i + 1 < n {
            state = FlatState::from_slice(dynamics.propagate(&state.to_vector(), &input.to_vector()).as_slice());
        }
    }

    // gimbal: follow the pointing angles with clamped rates
    let limits = project.gimbal_limits;
    let clamp = |v: f64, range: Option<[f64; 2]>| match range {
        Some([lo, hi]) => v.clamp(lo, hi),
        None => v,
    };
    let mut previous_yaw = 0.0;
    let mut desired = Vec::with_capacity(n);
    for i in 0..n {
        let (gy, gp) = pointing_angles(&x.position(i), &x.target(i), x.yaw(i));
        let gy = wrap_near(gy, previous_yaw);
        previous_yaw = gy;
        desired.push((clamp(gy, limits.map(|l| l.yaw_range)), clamp(gp, limits.map(|l| l.pitch_range))));
    }
    let mut angles = desired[0];
    for i in 0..n {
        let g = gimbal_index(i);
        let s = x.as_mut_slice();
        s[g] = angles.0;
        s[g + 1] = angles.1;
        if i + 1 < n {
            let rate_range = limits.map(|l| l.rate_range);
            let ry = clamp((desired[i + 1].0 - angles.0) / dt, rate_range);
            let rp = clamp((desired[i + 1].1 - angles.1) / dt, rate_range);
            s[g + 2] = ry;
            s[g + 3] = rp;
            angles = (angles.0 + dt * ry, angles.1 + dt * rp);
        }
    }
    Ok(x)
}

/// Linearized clearance constraint `normal . r >= rhs` for one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleRow {
    pub normal: Vector3<f64>,
    pub rhs: f64,
    /// The position sat on the centre and a fallback direction was used.
    pub fallback: bool,
}

/// Tangent half-space of the inflated sphere facing `position`:
/// `n . r >= o_r + margin + n . o_c` with `n` the unit direction from the
/// centre. At the centre `previous` (or +z) stands in for `n`.
pub fn linearize_obstacle(obstacle: &Obstacle, position: &Vector3<f64>, previous: Option<Vector3<f64>>) -> ObstacleRow {
    let c = obstacle.center();
    let d = position - c;
    let (normal, fallback) = if d.norm() < 1e-9 {
        (previous.unwrap_or_else(Vector3::z), true)
    } else {
        (d.normalize(), false)
    };
    ObstacleRow {
        normal,
        rhs: obstacle.radius + obstacle.margin + normal.dot(&c),
        fallback,
    }
}

/// Assembles the QP around `x_ref`: dynamics and gimbal integrators plus the
/// initial pin as equalities, boxes and linearized obstacles as
/// inequalities, and the local model of the objective in absolute
/// coordinates with a small proximal term around `x_ref`.
pub fn build_problem(project: &Project, x_ref: &StackedVariables) -> Result<SparseQP> {
    let n = project.num_stages();
    assert_eq!(x_ref.num_stages(), n, "reference has the wrong stage count");
    let nv = x_ref.len();
    let layout = ProblemLayout::new(project);
    let dynamics = project.dynamics()?;
    let bounds = project.input_bounds()?;
    let dt = project.dt;

    let mut eq = Triplets::new(layout.eq_rows(), nv);
    let mut eq_rhs = Vec::with_capacity(layout.eq_rows());
    let start = initial_state(project)?.to_vector();
    for k in 0..8 {
        eq.push(eq_rhs.len(), StackedVariables::index(0, POSITION + k), 1.0);
        eq_rhs.push(start[k]);
    }
    for i in 0..n - 1 {
        for k in 0..8 {
            let row = eq_rhs.len();
            eq.push(row, StackedVariables::index(i + 1, POSITION + k), 1.0);
            for j in 0..8 {
                eq.push(row, StackedVariables::index(i, POSITION + j), -dynamics.a_mat[(k, j)]);
            }
            for j in 0..4 {
                eq.push(row, StackedVariables::index(i, FORCE + j), -dynamics.b_mat[(k, j)]);
            }
            eq_rhs.push(dynamics.c_vec[k]);
        }
        for k in 0..2 {
            let row = eq_rhs.len();
            eq.push(row, gimbal_index(i + 1) + k, 1.0);
            eq.push(row, gimbal_index(i) + k, -1.0);
            eq.push(row, gimbal_index(i) + 2 + k, -dt);
            eq_rhs.push(0.0);
        }
    }
    debug_assert_eq!(eq_rhs.len(), layout.eq_rows());

    let mut ineq = Triplets::new(layout.ineq_rows(), nv);
    let mut ineq_rhs = Vec::with_capacity(layout.ineq_rows());
    let upper_bound = |ineq: &mut Triplets, rhs: &mut Vec<f64>, idx: usize, lo: f64, hi: f64| {
        ineq.push(rhs.len(), idx, 1.0);
        rhs.push(hi);
        ineq.push(rhs.len(), idx, -1.0);
        rhs.push(-lo);
    };
    let lower = bounds.input_lower();
    let upper = bounds.input_upper();
    for i in 0..n {
        for k in 0..4 {
            upper_bound(&mut ineq, &mut ineq_rhs, StackedVariables::index(i, FORCE + k), lower[k], upper[k]);
        }
        if let Some(g) = &project.gimbal_limits {
            let base = gimbal_index(i);
            upper_bound(&mut ineq, &mut ineq_rhs, base, g.yaw_range[0], g.yaw_range[1]);
            upper_bound(&mut ineq, &mut ineq_rhs, base + 1, g.pitch_range[0], g.pitch_range[1]);
            upper_bound(&mut ineq, &mut ineq_rhs, base + 2, g.rate_range[0], g.rate_range[1]);
            upper_bound(&mut ineq, &mut ineq_rhs, base + 3, g.rate_range[0], g.rate_range[1]);
        }
    }
    for o in &project.obstacles {
        let mut previous = None;
        for i in 1..n {
            let row = linearize_obstacle(o, &x_ref.position(i), previous);
            previous = Some(row.normal);
            let r = ineq_rhs.len();
            for k in 0..3 {
                ineq.push(r, StackedVariables::index(i, POSITION + k), -row.normal[k]);
            }
            ineq_rhs.push(-row.rhs);
        }
    }
    debug_assert_eq!(ineq_rhs.len(), layout.ineq_rows());

    let model = total_cost(x_ref, &project.weights, &project.cost_data())?.model;
    let w = project.iqp.proximal_weight;
    let mut hessian = Triplets::new(nv, nv);
    for (r, c, v) in model.hessian.iter() {
        hessian.push(r, c, v);
    }
    let mut linear = model.linear;
    if w > 0.0 {
        for (j, f) in linear.iter_mut().enumerate() {
            hessian.push(j, j, w);
            *f -= w * x_ref.as_slice()[j];
        }
    }
    Ok(SparseQP::new(hessian.to_csc(), linear, eq.to_csc(), eq_rhs, ineq.to_csc(), ineq_rhs))
}
