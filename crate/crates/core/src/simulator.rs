//! Closed-loop simulation of the full rigid-body model.
//!
//! A position loop turns reference tracking errors into a desired force, the
//! force and reference yaw fix a desired attitude, and a geometric attitude
//! loop on SO(3) produces body moments. Rotor speeds come from the inverse
//! mixer with saturation, and the rigid body is integrated with RK4.

use nalgebra::{Matrix3, SMatrix, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    inverse_mixer, nonlinear_derivative, project_to_rotation, vee, FlatState, FullState, PlatformParams,
};
use crate::error::Divergence;
use crate::planner::Trajectory;
use crate::{Error, Result};

/// Feedback gains of the cascaded controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// 3x6 state feedback on `[r - r_d, v - v_d]`, rows are force axes.
    pub position_feedback: [[f64; 6]; 3],
    /// `K_R`, N m per unit attitude error.
    pub attitude_gain: [[f64; 3]; 3],
    /// `K_w`, N m s per rad.
    pub rate_gain: [[f64; 3]; 3],
}

impl ControllerGains {
    /// Diagonal gains: position 8 and velocity 5 per axis scaled by mass,
    /// attitude loop at 12 rad/s natural frequency with unit damping.
    pub fn default_for(params: &PlatformParams) -> Self {
        let mut position_feedback = [[0.0; 6]; 3];
        for (k, row) in position_feedback.iter_mut().enumerate() {
            row[k] = 8.0 * params.mass;
            row[k + 3] = 5.0 * params.mass;
        }
        let mut attitude_gain = [[0.0; 3]; 3];
        let mut rate_gain = [[0.0; 3]; 3];
        for k in 0..3 {
            attitude_gain[k][k] = 144.0 * params.inertia[k];
            rate_gain[k][k] = 24.0 * params.inertia[k];
        }
        Self {
            position_feedback,
            attitude_gain,
            rate_gain,
        }
    }

    pub fn position_matrix(&self) -> SMatrix<f64, 3, 6> {
        SMatrix::<f64, 3, 6>::from_fn(|r, c| self.position_feedback[r][c])
    }

    pub fn attitude_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.attitude_gain[r][c])
    }

    pub fn rate_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rate_gain[r][c])
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .position_feedback
            .iter()
            .flatten()
            .chain(self.attitude_gain.iter().flatten())
            .chain(self.rate_gain.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("gains", "all entries must be finite"));
        }
        for k in 0..3 {
            for (field, v) in [
                ("gains.position_feedback", self.position_feedback[k][k]),
                ("gains.position_feedback", self.position_feedback[k][k + 3]),
                ("gains.attitude_gain", self.attitude_gain[k][k]),
                ("gains.rate_gain", self.rate_gain[k][k]),
            ] {
                if v <= 0.0 {
                    return Err(Error::validation(field, format!("diagonal entries must be > 0, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    /// Integration step, s.
    pub dt_sim: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self { dt_sim: 0.002 }
    }
}

/// `F_d = -K (x - x_d) + m (g z_w + a_d)`
pub fn position_controller(
    state: &FullState,
    reference: &FlatState,
    accel_ff: &Vector3<f64>,
    gains: &ControllerGains,
    params: &PlatformParams,
) -> Vector3<f64> {
    let pos_err = state.position - reference.position;
    let vel_err = state.velocity - reference.velocity;
    let err = Vector6::new(pos_err.x, pos_err.y, pos_err.z, vel_err.x, vel_err.y, vel_err.z);
    -gains.position_matrix() * err + params.mass * (Vector3::new(0.0, 0.0, params.gravity) + accel_ff)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeSetpoint {
    pub rotation: Matrix3<f64>,
    /// Force too small to define a thrust axis; the fallback was returned.
    pub held: bool,
    /// Thrust axis parallel to the heading; yaw was nudged by 1e-6 rad.
    pub perturbed: bool,
}

/// Desired attitude from the thrust direction and heading. `fallback` is
/// returned when the force vanishes.
pub fn attitude_setpoint(force: &Vector3<f64>, yaw: f64, fallback: &Matrix3<f64>) -> AttitudeSetpoint {
    let norm = force.norm();
    if norm < 1e-9 {
        return AttitudeSetpoint {
            rotation: *fallback,
            held: true,
            perturbed: false,
        };
    }
    let z = force / norm;
    let heading = |psi: f64| Vector3::new(psi.cos(), psi.sin(), 0.0);
    let mut perturbed = false;
    let mut y = z.cross(&heading(yaw));
    if y.norm() < 1e-9 {
        perturbed = true;
        y = z.cross(&heading(yaw + 1e-6));
    }
    let y = y.normalize();
    let x = y.cross(&z);
    AttitudeSetpoint {
        rotation: Matrix3::from_columns(&[x, y, z]),
        held: false,
        perturbed,
    }
}

/// Attitude error `1/2 vee(R_d' R - R' R_d)`.
pub fn attitude_error(rotation: &Matrix3<f64>, desired: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * vee(&(desired.transpose() * rotation - rotation.transpose() * desired))
}

/// `M = -K_R e_R - K_w e_w` with `e_w = w - R' w_d`; `w` is in the body frame,
/// `w_d` in the world frame.
pub fn attitude_controller(
    rotation: &Matrix3<f64>,
    desired: &Matrix3<f64>,
    body_rates: &Vector3<f64>,
    desired_rates_world: &Vector3<f64>,
    gains: &ControllerGains,
) -> Vector3<f64> {
    let e_r = attitude_error(rotation, desired);
    let e_w = body_rates - rotation.transpose() * desired_rates_world;
    -gains.attitude_matrix() * e_r - gains.rate_matrix() * e_w
}

/// Collective thrust: desired force projected on the body z axis.
pub fn thrust_projection(force: &Vector3<f64>, rotation: &Matrix3<f64>) -> f64 {
    force.dot(&rotation.column(2))
}

/// One classical RK4 step under a constant input, followed by projection of
/// the attitude back onto SO(3).
pub fn rk4_step(state: &FullState, u: &Vector4<f64>, h: f64, params: &PlatformParams) -> FullState {
    let k1 = nonlinear_derivative(state, u, params);
    let k2 = nonlinear_derivative(&state.advanced(&k1, 0.5 * h), u, params);
    let k3 = nonlinear_derivative(&state.advanced(&k2, 0.5 * h), u, params);
    let k4 = nonlinear_derivative(&state.advanced(&k3, h), u, params);
    let mut next = *state;
    next.position += h / 6.0 * (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity);
    next.velocity += h / 6.0 * (k1.acceleration + 2.0 * k2.acceleration + 2.0 * k3.acceleration + k4.acceleration);
    next.rotation += h / 6.0 * (k1.rotation + 2.0 * k2.rotation + 2.0 * k3.rotation + k4.rotation);
    next.body_rates += h / 6.0
        * (k1.angular_acceleration + 2.0 * k2.angular_acceleration + 2.0 * k3.angular_acceleration + k4.angular_acceleration);
    next.rotation = project_to_rotation(&next.rotation);
    next
}

/// Reference sampled from a trajectory: linear interpolation of the flat
/// state and the piecewise-constant planned acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub state: FlatState,
    pub acceleration: Vector3<f64>,
    pub stage: usize,
}

pub fn sample_reference(trajectory: &Trajectory, t: f64) -> ReferenceSample {
    let n = trajectory.num_stages();
    let dt = trajectory.dt();
    let s = (t / dt).max(0.0);
    let stage = (s.floor() as usize).min(n - 1);
    let next = (stage + 1).min(n - 1);
    let frac = if next == stage { 0.0 } else { (s - stage as f64).min(1.0) };
    let a = trajectory.flat_state(stage).to_vector();
    let b = trajectory.flat_state(next).to_vector();
    let state = FlatState::from_slice((a + (b - a) * frac).as_slice());
    let seg = stage.min(n.saturating_sub(2));
    let acceleration = if n >= 2 {
        (trajectory.flat_state(seg + 1).velocity - trajectory.flat_state(seg).velocity) / dt
    } else {
        Vector3::zeros()
    };
    ReferenceSample {
        state,
        acceleration,
        stage,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub samples: usize,
    pub rms_position_error: f64,
    pub max_position_error: f64,
    pub rms_yaw_error: f64,
    pub bbox_diagonal: f64,
    pub saturated_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub dt_sim: f64,
    pub times: Vec<f64>,
    pub states: Vec<FullState>,
    /// Commanded `(u1, u2, u3, u4)` before saturation.
    pub commands: Vec<[f64; 4]>,
    pub saturated: Vec<bool>,
    pub references: Vec<FlatState>,
    pub summary: TrackingSummary,
}

impl SimLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn position_error(&self, k: usize) -> f64 {
        (self.states[k].position - self.references[k].position).norm()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

/// Diagonal of the axis-aligned box around the planned positions.
pub fn bbox_diagonal(trajectory: &Trajectory) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for i in 0..trajectory.num_stages() {
        let p = trajectory.flat_state(i).position;
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    (hi - lo).norm()
}

/// Flies `trajectory` with the full model from a state matching its start.
pub fn simulate_tracking(
    trajectory: &Trajectory,
    params: &PlatformParams,
    gains: &ControllerGains,
    settings: &SimulationSettings,
) -> Result<SimLog> {
    let dt_sim = settings.dt_sim;
    if !(dt_sim.is_finite() && dt_sim > 0.0 && dt_sim <= trajectory.dt() + 1e-12) {
        return Err(Error::validation(
            "simulation.dt_sim",
            format!("must lie in (0, dt = {}], got {dt_sim}", trajectory.dt()),
        ));
    }
    let t_f = trajectory.duration();
    let steps = (t_f / dt_sim - 1e-9).ceil().max(0.0) as usize;
    let diagonal = bbox_diagonal(trajectory);
    let limit = (10.0 * diagonal).max(1.0);

    let start = sample_reference(trajectory, 0.0);
    let f0 = position_controller(
        &FullState::hover(start.state.position, start.state.yaw),
        &start.state,
        &start.acceleration,
        gains,
        params,
    );
    let r0 = attitude_setpoint(&f0, start.state.yaw, &Matrix3::identity()).rotation;
    let mut state = FullState {
        position: start.state.position,
        velocity: start.state.velocity,
        rotation: r0,
        body_rates: r0.transpose() * Vector3::new(0.0, 0.0, start.state.yaw_rate),
    };
    let mut desired = r0;

    let mut log = SimLog {
        dt_sim,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        commands: Vec::with_capacity(steps + 1),
        saturated: Vec::with_capacity(steps + 1),
        references: Vec::with_capacity(steps + 1),
        summary: TrackingSummary::default(),
    };
    for k in 0..=steps {
        let t = (k as f64 * dt_sim).min(t_f);
        let reference = sample_reference(trajectory, t);
        let force = position_controller(&state, &reference.state, &reference.acceleration, gains, params);
        let setpoint = attitude_setpoint(&force, reference.state.yaw, &desired);
        desired = setpoint.rotation;
        let moment = attitude_controller(
            &state.rotation,
            &desired,
            &state.body_rates,
            &Vector3::new(0.0, 0.0, reference.state.yaw_rate),
            gains,
        );
        let u = Vector4::new(thrust_projection(&force, &state.rotation), moment.x, moment.y, moment.z);
        let rotors = inverse_mixer(&u, params);

        let error = (state.position - reference.state.position).norm();
        if !error.is_finite() || error > limit {
            return Err(Error::Diverged(Divergence {
                time: t,
                stage: reference.stage,
                position_error: error,
                limit,
            }));
        }
        log.times.push(t);
        log.states.push(state);
        log.commands.push([u[0], u[1], u[2], u[3]]);
        log.saturated.push(rotors.saturated);
        log.references.push(reference.state);

        if k < steps {
            let h = (t_f - t).min(dt_sim);
            state = rk4_step(&state, &rotors.realized(params), h, params);
        }
    }

    let n = log.len() as f64;
    let mut sq = 0.0;
    let mut max: f64 = 0.0;
    let mut yaw_sq = 0.0;
    for k in 0..log.len() {
        let e = log.position_error(k);
        sq += e * e;
        max = max.max(e);
        let ey = wrap_angle(log.states[k].yaw() - log.references[k].yaw);
        yaw_sq += ey * ey;
    }
    log.summary = TrackingSummary {
        samples: log.len(),
        rms_position_error: (sq / n).sqrt(),
        max_position_error: max,
        rms_yaw_error: (yaw_sq / n).sqrt(),
        bbox_diagonal: diagonal,
        saturated_samples: log.saturated.iter().filter(|s| **s).count(),
    };
    Ok(log)
}
