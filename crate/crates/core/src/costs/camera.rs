//! Camera angle error between the gimbal direction and the target direction.

use nalgebra::Vector3;

use super::{
    CostTerm, ModelBuilder, StackedVariables, GIMBAL_PITCH, GIMBAL_YAW, POSITION, TARGET, YAW,
};

/// Below this distance the target direction is undefined.
const MIN_DISTANCE: f64 = 1e-9;
/// Below this sine the angle sits at 0 or pi where it is not differentiable.
const MIN_SINE: f64 = 1e-12;

/// Unit viewing direction of a camera on a yaw/pitch gimbal.
pub fn camera_direction(yaw: f64, gimbal_yaw: f64, gimbal_pitch: f64) -> Vector3<f64> {
    let (st, ct) = (yaw + gimbal_yaw).sin_cos();
    let (sp, cp) = gimbal_pitch.sin_cos();
    Vector3::new(cp * ct, cp * st, sp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleError {
    /// rad, in [0, pi]
    pub value: f64,
    /// Quad and target coincide; value is 0.
    pub degenerate: bool,
    /// d value / d (r, yaw, gimbal yaw, gimbal pitch, r_t)
    pub gradient: [f64; 9],
}

/// Angle between the camera axis and the direction from the vehicle to the target.
pub fn camera_angle_error(
    quad_position: &Vector3<f64>,
    yaw: f64,
    gimbal: (f64, f64),
    target_position: &Vector3<f64>,
) -> AngleError {
    let p_d = target_position - quad_position;
    let dist = p_d.norm();
    if dist < MIN_DISTANCE {
        return AngleError { value: 0.0, degenerate: true, gradient: [0.0; 9] };
    }
    let d_hat = p_d / dist;
    let p_l = camera_direction(yaw, gimbal.0, gimbal.1);
    let c = d_hat.dot(&p_l).clamp(-1.0, 1.0);
    // same as acos(c) with a clamped argument, but accurate near 0 and pi
    let s = d_hat.cross(&p_l).norm();
    let value = s.atan2(c);

    let mut gradient = [0.0; 9];
    if s > MIN_SINE {
        let g_d = -(p_l - c * d_hat) / (dist * s);
        let g_l = -(d_hat - c * p_l) / s;
        let (st, ct) = (yaw + gimbal.0).sin_cos();
        let (sp, cp) = gimbal.1.sin_cos();
        let dl_dtheta = Vector3::new(-cp * st, cp * ct, 0.0);
        let dl_dphi = Vector3::new(-sp * ct, -sp * st, cp);
        for k in 0..3 {
            gradient[k] = -g_d[k];
            gradient[6 + k] = g_d[k];
        }
        gradient[3] = g_l.dot(&dl_dtheta);
        gradient[4] = gradient[3];
        gradient[5] = g_l.dot(&dl_dphi);
    }
    AngleError { value, degenerate: false, gradient }
}

/// Variable indices matching [`AngleError::gradient`].
fn stage_indices(stage: usize) -> [usize; 9] {
    let i = |o| StackedVariables::index(stage, o);
    [
        i(POSITION),
        i(POSITION + 1),
        i(POSITION + 2),
        i(YAW),
        i(GIMBAL_YAW),
        i(GIMBAL_PITCH),
        i(TARGET),
        i(TARGET + 1),
        i(TARGET + 2),
    ]
}

/// `sum_i alpha_i^2` with a Gauss-Newton model around `x`.
pub fn camera_cost(x: &StackedVariables) -> CostTerm {
    let mut builder = ModelBuilder::new(x.len());
    let mut value = 0.0;
    let mut degenerate = Vec::new();
    let data = x.as_slice();
    for stage in 0..x.num_stages() {
        let e = camera_angle_error(&x.position(stage), x.yaw(stage), x.gimbal(stage), &x.target(stage));
        if e.degenerate {
            degenerate.push(stage);
            continue;
        }
        value += e.value * e.value;
        let idx = stage_indices(stage);
        let entries: Vec<(usize, f64)> = idx.iter().copied().zip(e.gradient).collect();
        let offset = e.value - entries.iter().map(|&(i, g)| g * data[i]).sum::<f64>();
        builder.add_residual(&entries, offset, 1.0);
    }
    CostTerm { value, model: builder.finish(), degenerate_stages: degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::test_support::{assert_gradients_close, fd_gradient, random_stacked};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn close(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn direction_examples() {
        assert!(close(&camera_direction(0.0, 0.0, 0.0), &Vector3::x()));
        assert!(close(&camera_direction(0.3, -1.0, FRAC_PI_2), &Vector3::z()));
        assert!(close(&camera_direction(FRAC_PI_4, FRAC_PI_4, 0.0), &Vector3::y()));
        assert!((camera_direction(1.2, 0.4, -0.7).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn angle_examples() {
        let o = Vector3::zeros();
        let a = |t: Vector3<f64>| camera_angle_error(&o, 0.0, (0.0, 0.0), &t);
        assert_eq!(a(Vector3::new(2.0, 0.0, 0.0)).value, 0.0);
        assert!((a(Vector3::new(0.0, 2.0, 0.0)).value - FRAC_PI_2).abs() < 1e-15);
        assert!((a(Vector3::new(1.0, 1.0, 0.0)).value - FRAC_PI_4).abs() < 1e-15);
        assert!((a(Vector3::new(-3.0, 0.0, 0.0)).value - std::f64::consts::PI).abs() < 1e-15);
        let d = a(Vector3::zeros());
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn angle_is_invariant_under_rotation_about_vertical() {
        let r = Vector3::new(1.0, -2.0, 0.5);
        let t = Vector3::new(4.0, 1.0, 2.0);
        let base = camera_angle_error(&r, 0.2, (0.3, -0.1), &t).value;
        for k in 0..12 {
            let phi = k as f64 * 0.5;
            let rot = crate::dynamics::yaw_rotation(phi);
            let t2 = r + rot * (t - r);
            let v = camera_angle_error(&r, 0.2 + phi, (0.3, -0.1), &t2).value;
            assert!((v - base).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_examples() {
        let mut x = StackedVariables::zeros(4, 0.1);
        for i in 0..4 {
            x.set_vec3(i, TARGET, &Vector3::new(2.0, 0.0, 0.0));
        }
        assert_eq!(camera_cost(&x).value, 0.0);
        x.set_vec3(2, TARGET, &Vector3::new(0.0, 2.0, 0.0));
        assert!((camera_cost(&x).value - FRAC_PI_2 * FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn gauss_newton_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let x = random_stacked(6, 0.1, 100 + seed);
            let t = camera_cost(&x);
            assert!(t.degenerate_stages.is_empty());
            let fd = fd_gradient(&x, |y| camera_cost(y).value);
            assert_gradients_close(&t.model.gradient(x.as_slice()), &fd, 1e-5);
            assert!((t.model.value(x.as_slice()) - t.value).abs() < 1e-10 * t.value.max(1.0));
            assert!(t.model.hessian.is_symmetric(1e-12));
        }
    }
}
