//! Perspective skewness of the target's vertical extent.

use nalgebra::Vector3;

use super::{CostTerm, ModelBuilder, StackedVariables, POSITION, TARGET};

/// Denominator guard relative to |p_d|^2.
const DENOMINATOR_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewnessError {
    pub value: f64,
    /// Denominator too small; value is 0 and the stage is dropped.
    pub degenerate: bool,
    /// d value / d (r, r_t)
    pub gradient: [f64; 6],
}

/// `((p_d + h/2).p_d) / ((p_d - h/2).p_d) - 1` with `p_d = r_t - r`. The
/// half-height vector flips sign when the camera is above the target centre
/// so that mirrored geometries give the same error.
pub fn skewness_error(quad_position: &Vector3<f64>, target_position: &Vector3<f64>, target_half_height: f64) -> SkewnessError {
    let p = target_position - quad_position;
    let h_sign = if p.z >= 0.0 { 1.0 } else { -1.0 };
    let h = Vector3::new(0.0, 0.0, h_sign * target_half_height);
    let pp = p.norm_squared();
    let b1 = pp + 0.5 * h.dot(&p);
    let b2 = pp - 0.5 * h.dot(&p);
    if pp == 0.0 || b2.abs() < DENOMINATOR_EPS * pp {
        return SkewnessError { value: 0.0, degenerate: true, gradient: [0.0; 6] };
    }
    let value = b1 / b2 - 1.0;
    let db1 = 2.0 * p + 0.5 * h;
    let db2 = 2.0 * p - 0.5 * h;
    let g = (db1 * b2 - db2 * b1) / (b2 * b2);
    let mut gradient = [0.0; 6];
    for k in 0..3 {
        gradient[k] = -g[k];
        gradient[3 + k] = g[k];
    }
    SkewnessError { value, degenerate: false, gradient }
}

/// `sum_i s_i^2` with a Gauss-Newton model around `x`.
pub fn skewness_cost(x: &StackedVariables, target_half_height: f64) -> CostTerm {
    let mut builder = ModelBuilder::new(x.len());
    let mut value = 0.0;
    let mut degenerate = Vec::new();
    let data = x.as_slice();
    for stage in 0..x.num_stages() {
        let e = skewness_error(&x.position(stage), &x.target(stage), target_half_height);
        if e.degenerate {
            degenerate.push(stage);
            continue;
        }
        value += e.value * e.value;
        let entries: Vec<(usize, f64)> = (0..3)
            .map(|k| StackedVariables::index(stage, POSITION + k))
            .chain((0..3).map(|k| StackedVariables::index(stage, TARGET + k)))
            .zip(e.gradient)
            .collect();
        let offset = e.value - entries.iter().map(|&(i, g)| g * data[i]).sum::<f64>();
        builder.add_residual(&entries, offset, 1.0);
    }
    CostTerm { value, model: builder.finish(), degenerate_stages: degenerate }
}
