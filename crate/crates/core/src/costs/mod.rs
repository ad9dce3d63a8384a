//! Energy terms of the planning objective.
//!
//! The decision vector stacks 19 scalars per stage (see [`StackedVariables`]).
//! Every term produces its value together with a [`QuadraticModel`]
//! `1/2 X' H X + f' X + c` around the current point: exact for the keyframe
//! and finite-difference terms, Gauss-Newton for the camera-angle and
//! skewness terms.

mod camera;
mod quadratic;
mod skewness;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FlatInput, FlatState};
use crate::sparse::{dot, CscMatrix, Triplets};
use crate::{Error, Result};

pub use camera::{camera_angle_error, camera_cost, camera_direction, AngleError};
pub use quadratic::{anchor_cost, derivative_cost, Anchor, Channel};
pub use skewness::{skewness_cost, skewness_error, SkewnessError};

/// Scalars per stage.
pub const STRIDE: usize = 19;
pub const POSITION: usize = 0;
pub const YAW: usize = 3;
pub const VELOCITY: usize = 4;
pub const YAW_RATE: usize = 7;
pub const FORCE: usize = 8;
pub const YAW_MOMENT: usize = 11;
pub const GIMBAL_YAW: usize = 12;
pub const GIMBAL_PITCH: usize = 13;
pub const GIMBAL_YAW_RATE: usize = 14;
pub const GIMBAL_PITCH_RATE: usize = 15;
pub const TARGET: usize = 16;

/// Stage-major decision vector: per stage the flat state (8), flat input (4),
/// gimbal yaw and pitch, gimbal rates (2) and the camera target position (3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedVariables {
    num_stages: usize,
    dt: f64,
    data: Vec<f64>,
}

impl StackedVariables {
    pub fn zeros(num_stages: usize, dt: f64) -> Self {
        Self {
            num_stages,
            dt,
            data: vec![0.0; num_stages * STRIDE],
        }
    }

    pub fn from_vec(num_stages: usize, dt: f64, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), num_stages * STRIDE, "stacked vector length");
        Self { num_stages, dt, data }
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Global index of `offset` within `stage`.
    #[inline]
    pub fn index(stage: usize, offset: usize) -> usize {
        stage * STRIDE + offset
    }

    pub fn stage(&self, stage: usize) -> &[f64] {
        &self.data[stage * STRIDE..(stage + 1) * STRIDE]
    }

    pub fn stage_mut(&mut self, stage: usize) -> &mut [f64] {
        &mut self.data[stage * STRIDE..(stage + 1) * STRIDE]
    }

    pub fn vec3(&self, stage: usize, offset: usize) -> Vector3<f64> {
        let s = self.stage(stage);
        Vector3::new(s[offset], s[offset + 1], s[offset + 2])
    }

    pub fn set_vec3(&mut self, stage: usize, offset: usize, v: &Vector3<f64>) {
        let s = self.stage_mut(stage);
        s[offset..offset + 3].copy_from_slice(v.as_slice());
    }

    pub fn position(&self, stage: usize) -> Vector3<f64> {
        self.vec3(stage, POSITION)
    }

    pub fn target(&self, stage: usize) -> Vector3<f64> {
        self.vec3(stage, TARGET)
    }

    pub fn yaw(&self, stage: usize) -> f64 {
        self.stage(stage)[YAW]
    }

    /// (gimbal yaw, gimbal pitch)
    pub fn gimbal(&self, stage: usize) -> (f64, f64) {
        let s = self.stage(stage);
        (s[GIMBAL_YAW], s[GIMBAL_PITCH])
    }

    pub fn flat_state(&self, stage: usize) -> FlatState {
        FlatState::from_slice(&self.stage(stage)[POSITION..FORCE])
    }

    pub fn set_flat_state(&mut self, stage: usize, state: &FlatState) {
        self.stage_mut(stage)[POSITION..FORCE].copy_from_slice(state.to_vector().as_slice());
    }

    pub fn flat_input(&self, stage: usize) -> FlatInput {
        FlatInput::from_slice(&self.stage(stage)[FORCE..GIMBAL_YAW])
    }

    pub fn set_flat_input(&mut self, stage: usize, input: &FlatInput) {
        self.stage_mut(stage)[FORCE..GIMBAL_YAW].copy_from_slice(input.to_vector().as_slice());
    }

    /// `self + alpha * direction`
    pub fn stepped(&self, direction: &[f64], alpha: f64) -> Self {
        let data = self.data.iter().zip(direction).map(|(x, d)| x + alpha * d).collect();
        Self::from_vec(self.num_stages, self.dt, data)
    }

    pub(crate) fn check_stage(&self, stage: usize) -> Result<()> {
        if stage >= self.num_stages {
            return Err(Error::StageOutOfRange {
                index: stage,
                stages: self.num_stages,
            });
        }
        Ok(())
    }
}

/// A user position anchor for the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub stage: usize,
    pub position: [f64; 3],
    /// Multiplies the keyframe weight for this keyframe only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// A user anchor for the camera target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyTarget {
    pub stage: usize,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimbalLimits {
    /// [min, max] gimbal yaw relative to the vehicle, rad.
    pub yaw_range: [f64; 2],
    /// [min, max] gimbal pitch, rad (positive looks up).
    pub pitch_range: [f64; 2],
    /// [min, max] of both gimbal rates, rad/s.
    pub rate_range: [f64; 2],
}

impl GimbalLimits {
    pub fn validate(&self) -> Result<()> {
        for (field, [lo, hi]) in [
            ("gimbal_limits.yaw_range", self.yaw_range),
            ("gimbal_limits.pitch_range", self.pitch_range),
            ("gimbal_limits.rate_range", self.rate_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation(field, format!("need finite min < max, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Weights of the combined objective. All nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    /// keyframe positions
    pub lambda_k: f64,
    /// vehicle position derivative
    pub lambda_d: f64,
    /// keytarget positions
    pub lambda_t: f64,
    /// target position derivative
    pub lambda_td: f64,
    /// gimbal angle derivative
    pub lambda_g: f64,
    /// camera angle error
    pub lambda_c: f64,
    /// skewness error
    pub lambda_s: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_k: 1000.0,
            lambda_d: 1e-3,
            lambda_t: 100.0,
            lambda_td: 1e-2,
            lambda_g: 1e-2,
            lambda_c: 0.0,
            lambda_s: 0.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            lambda_k: 0.0,
            lambda_d: 0.0,
            lambda_t: 0.0,
            lambda_td: 0.0,
            lambda_g: 0.0,
            lambda_c: 0.0,
            lambda_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("weights.{name}"), format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("lambda_k", self.lambda_k),
            ("lambda_d", self.lambda_d),
            ("lambda_t", self.lambda_t),
            ("lambda_td", self.lambda_td),
            ("lambda_g", self.lambda_g),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
        ]
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "lambda_k" => &mut self.lambda_k,
            "lambda_d" => &mut self.lambda_d,
            "lambda_t" => &mut self.lambda_t,
            "lambda_td" => &mut self.lambda_td,
            "lambda_g" => &mut self.lambda_g,
            "lambda_c" => &mut self.lambda_c,
            "lambda_s" => &mut self.lambda_s,
            _ => return None,
        })
    }

    /// True when the objective is exactly quadratic.
    pub fn is_quadratic(&self) -> bool {
        self.lambda_c == 0.0 && self.lambda_s == 0.0
    }
}

/// Finite-difference orders of the smoothness terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DerivativeOrders {
    pub quad_position: usize,
    pub target_position: usize,
    pub gimbal_angles: usize,
}

impl Default for DerivativeOrders {
    fn default() -> Self {
        Self {
            quad_position: 4,
            target_position: 3,
            gimbal_angles: 3,
        }
    }
}

/// `1/2 X' H X + f' X + c`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub hessian: CscMatrix,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl QuadraticModel {
    pub fn zero(n: usize) -> Self {
        Self {
            hessian: CscMatrix::zeros(n, n),
            linear: vec![0.0; n],
            constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.hessian.mul_vec(x)) + dot(&self.linear, x) + self.constant
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.hessian.mul_vec(x);
        for (a, b) in g.iter_mut().zip(&self.linear) {
            *a += b;
        }
        g
    }
}

/// Accumulates squared affine residuals `w (j' X + b)^2` into a model.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    hessian: Triplets,
    linear: Vec<f64>,
    constant: f64,
}

impl ModelBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            hessian: Triplets::new(n, n),
            linear: vec![0.0; n],
            constant: 0.0,
        }
    }

    /// Adds `weight * (sum_k c_k X[i_k] + b)^2`.
    pub fn add_residual(&mut self, entries: &[(usize, f64)], b: f64, weight: f64) {
        if weight == 0.0 {
            return;
        }
        for &(i, ci) in entries {
            for &(j, cj) in entries {
                self.hessian.push(i, j, 2.0 * weight * ci * cj);
            }
            self.linear[i] += 2.0 * weight * ci * b;
        }
        self.constant += weight * b * b;
    }

    pub fn add_model(&mut self, model: &QuadraticModel, weight: f64) {
        if weight == 0.0 {
            return;
        }
        for (r, c, v) in model.hessian.iter() {
            self.hessian.push(r, c, weight * v);
        }
        for (a, b) in self.linear.iter_mut().zip(&model.linear) {
            *a += weight * b;
        }
        self.constant += weight * model.constant;
    }

    pub fn finish(self) -> QuadraticModel {
        QuadraticModel {
            hessian: self.hessian.to_csc(),
            linear: self.linear,
            constant: self.constant,
        }
    }
}

/// Value of one energy term and its local model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub value: f64,
    pub model: QuadraticModel,
    /// Stages where the term is undefined and was dropped.
    pub degenerate_stages: Vec<usize>,
}

/// Problem data the objective depends on besides the variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CostData {
    pub keyframes: Vec<Keyframe>,
    pub keytargets: Vec<KeyTarget>,
    /// Half height of the target bounding box, m.
    pub target_half_height: f64,
    pub orders: DerivativeOrders,
}

/// Unweighted values of the enabled terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub keyframe: Option<f64>,
    pub quad_derivative: Option<f64>,
    pub keytarget: Option<f64>,
    pub target_derivative: Option<f64>,
    pub gimbal_derivative: Option<f64>,
    pub camera: Option<f64>,
    pub skewness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalCost {
    pub value: f64,
    pub terms: TermValues,
    pub model: QuadraticModel,
    pub degenerate_stages: Vec<usize>,
}

fn keyframe_anchors(data: &CostData) -> Vec<Anchor> {
    data.keyframes
        .iter()
        .map(|k| Anchor {
            stage: k.stage,
            position: Vector3::from(k.position),
            weight: k.weight.unwrap_or(1.0),
        })
        .collect()
}

fn keytarget_anchors(data: &CostData) -> Vec<Anchor> {
    data.keytargets
        .iter()
        .map(|k| Anchor {
            stage: k.stage,
            position: Vector3::from(k.position),
            weight: 1.0,
        })
        .collect()
}

/// Weighted sum of all enabled terms (weight > 0) and the assembled model.
pub fn total_cost(x: &StackedVariables, weights: &CostWeights, data: &CostData) -> Result<TotalCost> {
    total_cost_impl(x, weights, data, true)
}

/// Value only; skips building models. Used by the line search.
pub fn total_cost_value(x: &StackedVariables, weights: &CostWeights, data: &CostData) -> Result<f64> {
    Ok(total_cost_impl(x, weights, data, false)?.value)
}

fn total_cost_impl(x: &StackedVariables, weights: &CostWeights, data: &CostData, with_model: bool) -> Result<TotalCost> {
    let n = x.len();
    let mut builder = ModelBuilder::new(n);
    let mut terms = TermValues::default();
    let mut value = 0.0;
    let mut degenerate = Vec::new();
    let mut add = |slot: &mut Option<f64>, weight: f64, term: CostTerm, builder: &mut ModelBuilder| {
        *slot = Some(term.value);
        value += weight * term.value;
        if with_model {
            builder.add_model(&term.model, weight);
        }
        degenerate.extend(term.degenerate_stages);
    };
    if weights.lambda_k > 0.0 {
        let t = anchor_cost(x, &keyframe_anchors(data), Channel::QuadPosition)?;
        add(&mut terms.keyframe, weights.lambda_k, t, &mut builder);
    }
    if weights.lambda_d > 0.0 {
        let t = derivative_cost(x, data.orders.quad_position, Channel::QuadPosition)?;
        add(&mut terms.quad_derivative, weights.lambda_d, t, &mut builder);
    }
    if weights.lambda_t > 0.0 {
        let t = anchor_cost(x, &keytarget_anchors(data), Channel::TargetPosition)?;
        add(&mut terms.keytarget, weights.lambda_t, t, &mut builder);
    }
    if weights.lambda_td > 0.0 {
        let t = derivative_cost(x, data.orders.target_position, Channel::TargetPosition)?;
        add(&mut terms.target_derivative, weights.lambda_td, t, &mut builder);
    }
    if weights.lambda_g > 0.0 {
        let t = derivative_cost(x, data.orders.gimbal_angles, Channel::GimbalAngles)?;
        add(&mut terms.gimbal_derivative, weights.lambda_g, t, &mut builder);
    }
    if weights.lambda_c > 0.0 {
        let t = camera_cost(x);
        add(&mut terms.camera, weights.lambda_c, t, &mut builder);
    }
    if weights.lambda_s > 0.0 {
        let t = skewness_cost(x, data.target_half_height);
        add(&mut terms.skewness, weights.lambda_s, t, &mut builder);
    }
    degenerate.sort_unstable();
    degenerate.dedup();
    Ok(TotalCost {
        value,
        terms,
        model: builder.finish(),
        degenerate_stages: degenerate,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_stacked(stages: usize, dt: f64, seed: u64) -> StackedVariables {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = StackedVariables::zeros(stages, dt);
        for i in 0..stages {
            let s = x.stage_mut(i);
            for v in s.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            // keep targets away from the vehicle
            s[TARGET] += 4.0;
            s[TARGET + 2] += 1.5;
        }
        x
    }

    /// Central finite-difference gradient of `f` at `x`.
    pub fn fd_gradient(x: &StackedVariables, f: impl Fn(&StackedVariables) -> f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut probe = x.clone();
        for i in 0..x.len() {
            let h = 1e-6 * x.as_slice()[i].abs().max(1.0);
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + h;
            let fp = f(&probe);
            probe.as_mut_slice()[i] = orig - h;
            let fm = f(&probe);
            probe.as_mut_slice()[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    pub fn assert_gradients_close(analytic: &[f64], numeric: &[f64], rel: f64) {
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            assert!(
                (a - n).abs() <= rel * scale.max(n.abs()),
                "component {i}: analytic {a} vs finite difference {n}"
            );
        }
    }
}
