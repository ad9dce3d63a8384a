//! Exactly quadratic terms: anchors and finite-difference smoothness.

use nalgebra::Vector3;

use super::{CostTerm, ModelBuilder, StackedVariables, GIMBAL_YAW, POSITION, TARGET};
use crate::{Error, Result};

/// Which block of each stage a term acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    QuadPosition,
    TargetPosition,
    GimbalAngles,
}

impl Channel {
    pub fn offset(self) -> usize {
        match self {
            Channel::QuadPosition => POSITION,
            Channel::TargetPosition => TARGET,
            Channel::GimbalAngles => GIMBAL_YAW,
        }
    }

    pub fn dims(self) -> usize {
        match self {
            Channel::GimbalAngles => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub stage: usize,
    pub position: Vector3<f64>,
    pub weight: f64,
}

/// `sum_j w_j ||p(stage_j) - k_j||^2` over the given channel.
pub fn anchor_cost(x: &StackedVariables, anchors: &[Anchor], channel: Channel) -> Result<CostTerm> {
    if channel == Channel::GimbalAngles {
        return Err(Error::validation("channel", "anchors act on 3D positions"));
    }
    let mut builder = ModelBuilder::new(x.len());
    let mut value = 0.0;
    for a in anchors {
        x.check_stage(a.stage)?;
        for d in 0..3 {
            let idx = StackedVariables::index(a.stage, channel.offset() + d);
            let r = x.as_slice()[idx] - a.position[d];
            value += a.weight * r * r;
            builder.add_residual(&[(idx, 1.0)], -a.position[d], a.weight);
        }
    }
    Ok(CostTerm {
        value,
        model: builder.finish(),
        degenerate_stages: Vec::new(),
    })
}

/// Backward-difference coefficients of order `q` divided by `dt^q`.
/// Entry k multiplies the sample `k` stages back.
pub fn difference_coefficients(q: usize, dt: f64) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..q {
        let mut next = vec![0.0; c.len() + 1];
        for (k, v) in c.iter().enumerate() {
            next[k] += v;
            next[k + 1] -= v;
        }
        c = next;
    }
    let scale = dt.powi(q as i32);
    c.into_iter().map(|v| v / scale).collect()
}

/// `sum_i ||D^q p_i||^2` with backward differences over windows ending at
/// stages q..N-1.
pub fn derivative_cost(x: &StackedVariables, order: usize, channel: Channel) -> Result<CostTerm> {
    let n = x.num_stages();
    if order == 0 || n <= order {
        return Err(Error::TooFewStages { order, stages: n });
    }
    let coeffs = difference_coefficients(order, x.dt());
    let mut builder = ModelBuilder::new(x.len());
    let mut value = 0.0;
    let mut entries = Vec::with_capacity(order + 1);
    for i in order..n {
        for d in 0..channel.dims() {
            entries.clear();
            let mut r = 0.0;
            for (k, c) in coeffs.iter().enumerate() {
                let idx = StackedVariables::index(i - k, channel.offset() + d);
                entries.push((idx, *c));
                r += c * x.as_slice()[idx];
            }
            value += r * r;
            builder.add_residual(&entries, 0.0, 1.0);
        }
    }
    Ok(CostTerm {
        value,
        model: builder.finish(),
        degenerate_stages: Vec::new(),
    })
}
