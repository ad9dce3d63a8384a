//! Vehicle models.
//!
//! Two models live here. The planning model treats the vehicle as a point mass
//! with a yaw degree of freedom, driven directly by a world-frame force and a
//! yaw moment; its state is the flat output `[r, psi]` and its rates. The full
//! model is the rigid body with four rotors used by the simulator.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FLAT_STATE_DIM: usize = 8;
pub const FLAT_INPUT_DIM: usize = 4;

pub type FlatStateVector = SVector<f64, FLAT_STATE_DIM>;
pub type FlatInputVector = SVector<f64, FLAT_INPUT_DIM>;

fn default_gravity() -> f64 {
    9.81
}

/// Physical constants of the vehicle.
///
/// The inertia tensor is diagonal (body principal axes); `inertia[2]` is the
/// yaw inertia used by the planning model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the body inertia tensor, kg m^2.
    pub inertia: [f64; 3],
    /// Rotor thrust coefficient `k_F`, N s^2.
    pub rotor_thrust_coeff: f64,
    /// Rotor drag-moment coefficient `k_M`, N m s^2.
    pub rotor_moment_coeff: f64,
    /// Rotor axis to centre of mass, m.
    pub arm_length: f64,
    /// Maximum force of a single rotor, N.
    pub rotor_force_max: f64,
    /// Maximum moment of a single rotor, N m.
    pub rotor_moment_max: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

impl PlatformParams {
    pub fn inertia_yaw(&self) -> f64 {
        self.inertia[2]
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    pub fn hover_force(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.mass * self.gravity)
    }

    /// Largest collective thrust, all four rotors at `rotor_force_max`.
    pub fn thrust_max(&self) -> f64 {
        4.0 * self.rotor_force_max
    }

    /// Largest yaw moment, two co-rotating rotors full on and the others off.
    pub fn yaw_moment_max(&self) -> f64 {
        2.0 * self.rotor_moment_max
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("platform.mass", self.mass),
            ("platform.inertia[0]", self.inertia[0]),
            ("platform.inertia[1]", self.inertia[1]),
            ("platform.inertia[2]", self.inertia[2]),
            ("platform.rotor_thrust_coeff", self.rotor_thrust_coeff),
            ("platform.rotor_moment_coeff", self.rotor_moment_coeff),
            ("platform.arm_length", self.arm_length),
            ("platform.rotor_force_max", self.rotor_force_max),
            ("platform.rotor_moment_max", self.rotor_moment_max),
            ("platform.gravity", self.gravity),
        ];
        for (field, value) in scalars {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(field, format!("must be finite and > 0, got {value}")));
            }
        }
        Ok(())
    }
}

/// Flat-output state: position, yaw and their first derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlatState {
    pub position: Vector3<f64>,
    /// Unwrapped yaw, rad.
    pub yaw: f64,
    pub velocity: Vector3<f64>,
    pub yaw_rate: f64,
}

impl FlatState {
    pub fn at_rest(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            yaw,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> FlatStateVector {
        let p = &self.position;
        let v = &self.velocity;
        FlatStateVector::from_column_slice(&[p.x, p.y, p.z, self.yaw, v.x, v.y, v.z, self.yaw_rate])
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            position: Vector3::new(s[0], s[1], s[2]),
            yaw: s[3],
            velocity: Vector3::new(s[4], s[5], s[6]),
            yaw_rate: s[7],
        }
    }
}

/// World-frame force and yaw moment applied to the planning model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlatInput {
    pub force: Vector3<f64>,
    pub yaw_moment: f64,
}

impl FlatInput {
    pub fn to_vector(&self) -> FlatInputVector {
        let f = &self.force;
        FlatInputVector::new(f.x, f.y, f.z, self.yaw_moment)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            force: Vector3::new(s[0], s[1], s[2]),
            yaw_moment: s[3],
        }
    }
}

/// Axis-aligned force box. The planner constrains `|F_i - center_i| <= half_width_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceBox {
    pub center: Vector3<f64>,
    pub half_width: Vector3<f64>,
}

impl ForceBox {
    pub fn lower(&self) -> Vector3<f64> {
        self.center - self.half_width
    }

    pub fn upper(&self) -> Vector3<f64> {
        self.center + self.half_width
    }
}

/// Conservative input limits of the planning model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    /// Fraction of the maximum yaw moment reserved for yaw control.
    pub beta: f64,
    /// `4 F_max`
    pub thrust_max: f64,
    /// `2 M_max`
    pub yaw_moment_peak: f64,
    /// Bound on the norm of the force vector.
    pub force_norm_max: f64,
    /// Bound on the magnitude of the yaw moment.
    pub yaw_moment_max: f64,
    /// Box inscribed in the force-norm ball, centred at hover thrust.
    pub force_box: ForceBox,
}

impl InputBounds {
    pub fn input_lower(&self) -> FlatInputVector {
        let l = self.force_box.lower();
        FlatInputVector::new(l.x, l.y, l.z, -self.yaw_moment_max)
    }

    pub fn input_upper(&self) -> FlatInputVector {
        let u = self.force_box.upper();
        FlatInputVector::new(u.x, u.y, u.z, self.yaw_moment_max)
    }
}

/// Couples the thrust and yaw-moment limits through `beta`.
///
/// Reserving `beta * 2 M_max` of yaw moment can force two rotors down to
/// `(1 - beta) F_max`, which leaves `(1 - beta / 2) 4 F_max` of collective
/// thrust. The linear program uses a box inscribed in the norm ball of that
/// radius, centred at hover so gravity compensation stays inside the box.
pub fn derive_input_bounds(params: &PlatformParams, beta: f64) -> Result<InputBounds> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::validation("beta", format!("must lie in [0, 1], got {beta}")));
    }
    let thrust_max = params.thrust_max();
    let yaw_moment_peak = params.yaw_moment_max();
    let force_norm_max = (1.0 - beta / 2.0) * thrust_max;
    let yaw_moment_max = beta * yaw_moment_peak;
    let hover = params.hover_force();
    let margin = force_norm_max - hover.z;
    if margin <= 0.0 {
        return Err(Error::validation(
            "beta",
            format!(
                "thrust limit {force_norm_max:.4} N at beta = {beta} cannot carry the weight {:.4} N",
                hover.z
            ),
        ));
    }
    let half = margin / 3f64.sqrt();
    Ok(InputBounds {
        beta,
        thrust_max,
        yaw_moment_peak,
        force_norm_max,
        yaw_moment_max,
        force_box: ForceBox {
            center: hover,
            half_width: Vector3::repeat(half),
        },
    })
}

/// Accelerations of the planning model under a given input.
pub fn flat_acceleration(input: &FlatInput, params: &PlatformParams) -> (Vector3<f64>, f64) {
    let linear = input.force / params.mass - Vector3::new(0.0, 0.0, params.gravity);
    (linear, input.yaw_moment / params.inertia_yaw())
}

/// Exact zero-order-hold discretization `x+ = A x + B u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDynamics {
    pub a_mat: SMatrix<f64, FLAT_STATE_DIM, FLAT_STATE_DIM>,
    pub b_mat: SMatrix<f64, FLAT_STATE_DIM, FLAT_INPUT_DIM>,
    pub c_vec: FlatStateVector,
    pub dt: f64,
}

impl DiscreteDynamics {
    pub fn propagate(&self, x: &FlatStateVector, u: &FlatInputVector) -> FlatStateVector {
        self.a_mat * x + self.b_mat * u + self.c_vec
    }
}

/// The flat model is four decoupled double integrators, so the matrix
/// exponential has a closed form.
pub fn discretize(params: &PlatformParams, dt: f64) -> Result<DiscreteDynamics> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::validation("dt", format!("must be finite and > 0, got {dt}")));
    }
    let mut a_mat = SMatrix::<f64, 8, 8>::identity();
    let mut b_mat = SMatrix::<f64, 8, 4>::zeros();
    let gains = [
        1.0 / params.mass,
        1.0 / params.mass,
        1.0 / params.mass,
        1.0 / params.inertia_yaw(),
    ];
    for (k, gain) in gains.iter().enumerate() {
        a_mat[(k, k + 4)] = dt;
        b_mat[(k, k)] = 0.5 * dt * dt * gain;
        b_mat[(k + 4, k)] = dt * gain;
    }
    let mut c_vec = FlatStateVector::zeros();
    c_vec[2] = -0.5 * params.gravity * dt * dt;
    c_vec[6] = -params.gravity * dt;
    Ok(DiscreteDynamics {
        a_mat,
        b_mat,
        c_vec,
        dt,
    })
}

/// Maps squared rotor speeds to `(u1, u2, u3, u4)`: collective thrust and
/// body moments about x, y, z.
pub fn mixer_matrix(params: &PlatformParams) -> Matrix4<f64> {
    let kf = params.rotor_thrust_coeff;
    let km = params.rotor_moment_coeff;
    let kfl = kf * params.arm_length;
    Matrix4::new(
        kf, kf, kf, kf, //
        0.0, kfl, 0.0, -kfl, //
        -kfl, 0.0, kfl, 0.0, //
        km, -km, km, -km,
    )
}

pub fn mixer(rotor_speeds_sq: &Vector4<f64>, params: &PlatformParams) -> Vector4<f64> {
    mixer_matrix(params) * rotor_speeds_sq
}

/// Result of inverting the mixer for a commanded input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorCommand {
    /// Squared rotor speeds after clamping to `[0, F_max / k_F]`.
    pub speeds_sq: Vector4<f64>,
    /// Unclamped solution of the mixer equations.
    pub raw_speeds_sq: Vector4<f64>,
    pub saturated: bool,
}

impl RotorCommand {
    /// Input actually produced by the clamped rotor speeds.
    pub fn realized(&self, params: &PlatformParams) -> Vector4<f64> {
        mixer(&self.speeds_sq, params)
    }
}

pub fn inverse_mixer(u: &Vector4<f64>, params: &PlatformParams) -> RotorCommand {
    let kf = params.rotor_thrust_coeff;
    let total = u[0] / kf;
    let roll = u[1] / (kf * params.arm_length); // s2 - s4
    let pitch = u[2] / (kf * params.arm_length); // s3 - s1
    let yaw = u[3] / params.rotor_moment_coeff; // s1 + s3 - s2 - s4
    let odd = 0.5 * (total + yaw); // s1 + s3
    let even = 0.5 * (total - yaw); // s2 + s4
    let raw = Vector4::new(
        0.5 * (odd - pitch),
        0.5 * (even + roll),
        0.5 * (odd + pitch),
        0.5 * (even - roll),
    );
    let upper = params.rotor_force_max / kf;
    let clamped = raw.map(|s| s.clamp(0.0, upper));
    RotorCommand {
        speeds_sq: clamped,
        raw_speeds_sq: raw,
        saturated: clamped != raw,
    }
}

/// State of the full rigid-body model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-world rotation; columns are the body axes in world coordinates.
    pub rotation: Matrix3<f64>,
    /// Angular velocity expressed in the body frame.
    pub body_rates: Vector3<f64>,
}

impl FullState {
    pub fn hover(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            rotation: yaw_rotation(yaw),
            body_rates: Vector3::zeros(),
        }
    }

    /// `self + h * d`, component-wise (no re-orthonormalization).
    pub fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            position: self.position + d.velocity * h,
            velocity: self.velocity + d.acceleration * h,
            rotation: self.rotation + d.rotation * h,
            body_rates: self.body_rates + d.angular_acceleration * h,
        }
    }

    /// Heading of the body x axis projected into the horizontal plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

/// Time derivative of a [`FullState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub angular_acceleration: Vector3<f64>,
}

/// Newton-Euler equations: `m r'' = u1 z_B + m g`, `R' = R [w]x`,
/// `I w' = M - w x I w` with `M = (u2, u3, u4)`.
pub fn nonlinear_derivative(state: &FullState, u: &Vector4<f64>, params: &PlatformParams) -> StateDerivative {
    let z_body = state.rotation.column(2).into_owned();
    let gravity = Vector3::new(0.0, 0.0, -params.gravity);
    let acceleration = z_body * (u[0] / params.mass) + gravity;
    let w = &state.body_rates;
    let inertia = Vector3::from(params.inertia);
    let iw = inertia.component_mul(w);
    let moment = Vector3::new(u[1], u[2], u[3]);
    let angular_acceleration = (moment - w.cross(&iw)).component_div(&inertia);
    StateDerivative {
        velocity: state.velocity,
        acceleration,
        rotation: state.rotation * skew(w),
        angular_acceleration,
    }
}

/// Cross-product matrix: `skew(a) * b == a x b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] on skew-symmetric matrices.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Nearest rotation matrix in the Frobenius norm (polar factor).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}
