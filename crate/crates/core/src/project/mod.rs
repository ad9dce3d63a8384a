//! Project documents, trajectory and simulation exports, and plots.
//!
//! A project is one JSON document with `"version": 1`. Loading fills every
//! documented default so that saving a loaded project writes out all values
//! explicitly. Unknown fields are rejected unless the lenient option is set.

mod csv;
mod plots;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::costs::{CostData, CostWeights, DerivativeOrders, GimbalLimits, KeyTarget, Keyframe};
use crate::dynamics::{derive_input_bounds, discretize, DiscreteDynamics, InputBounds, PlatformParams};
use crate::planner::{IqpSettings, Obstacle};
use crate::qp::QpSettings;
use crate::simulator::{ControllerGains, SimulationSettings};
use crate::{Error, Result};

pub use csv::{
    export_simlog, export_trajectory, parse_trajectory_csv, read_trajectory, simlog_row, trajectory_row, write_simlog_csv,
    write_trajectory_csv, SIMLOG_COLUMNS, TRAJECTORY_COLUMNS,
};
pub use plots::{emit_plots, inputs_svg, side_svg, topdown_svg, tracking_svg, PlotFiles};

pub const FORMAT_VERSION: u32 = 1;

fn default_version() -> u32 {
    FORMAT_VERSION
}

fn default_beta() -> f64 {
    0.2
}

fn default_dt() -> f64 {
    0.1
}

fn default_half_height() -> f64 {
    0.5
}

/// A keyframe as stored in the document. On load the stage (authoritative)
/// and the time `stage * dt` are both filled in; a time alone is rounded to
/// the nearest stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEntry {
    #[serde(default)]
    pub stage: Option<usize>,
    #[serde(default)]
    pub time: Option<f64>,
    pub position: [f64; 3],
    /// Multiplies `lambda_k` for this keyframe.
    #[serde(default)]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyTargetEntry {
    #[serde(default)]
    pub stage: Option<usize>,
    #[serde(default)]
    pub time: Option<f64>,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    #[serde(default = "default_version")]
    pub version: u32,
    pub platform: PlatformParams,
    /// Fraction of the peak yaw moment reserved for yaw control.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Stage spacing, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Flight duration `t_f = (N - 1) dt`, s. Defaults to the last anchor time.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub keyframes: Vec<KeyframeEntry>,
    #[serde(default)]
    pub keytargets: Vec<KeyTargetEntry>,
    /// Half height of the filmed subject, m.
    #[serde(default = "default_half_height")]
    pub target_half_height: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// `null` leaves the gimbal unconstrained.
    #[serde(default)]
    pub gimbal_limits: Option<GimbalLimits>,
    /// rad
    #[serde(default)]
    pub initial_yaw: f64,
    /// m/s; `null` takes the finite-difference velocity of the keyframe path.
    #[serde(default)]
    pub initial_velocity: Option<[f64; 3]>,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub derivative_orders: DerivativeOrders,
    #[serde(default)]
    pub solver: QpSettings,
    #[serde(default)]
    pub iqp: IqpSettings,
    /// Defaults depend on the platform and are filled in on load.
    #[serde(default)]
    pub gains: Option<ControllerGains>,
    #[serde(default)]
    pub simulation: SimulationSettings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Ignore unknown fields instead of rejecting them.
    pub lenient: bool,
}

impl Project {
    /// `N = t_f / dt + 1`. Only meaningful after loading.
    pub fn num_stages(&self) -> usize {
        let horizon = self.horizon.unwrap_or(0.0);
        (horizon / self.dt).round() as usize + 1
    }

    pub fn input_bounds(&self) -> Result<InputBounds> {
        derive_input_bounds(&self.platform, self.beta)
    }

    pub fn dynamics(&self) -> Result<DiscreteDynamics> {
        discretize(&self.platform, self.dt)
    }

    pub fn gains(&self) -> ControllerGains {
        self.gains.clone().unwrap_or_else(|| ControllerGains::default_for(&self.platform))
    }

    pub fn cost_data(&self) -> CostData {
        CostData {
            keyframes: self
                .keyframes
                .iter()
                .map(|k| Keyframe {
                    stage: k.stage.unwrap_or(0),
                    position: k.position,
                    weight: k.weight,
                })
                .collect(),
            keytargets: self
                .keytargets
                .iter()
                .map(|k| KeyTarget {
                    stage: k.stage.unwrap_or(0),
                    position: k.position,
                })
                .collect(),
            target_half_height: self.target_half_height,
            orders: self.derivative_orders,
        }
    }

    /// Fills derived and platform-dependent defaults, then validates.
    pub fn materialize(&mut self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        let dt = self.dt;
        let resolve = |field: String, stage: &mut Option<usize>, time: &mut Option<f64>| -> Result<()> {
            match (*stage, *time) {
                (Some(s), _) => *time = Some(s as f64 * dt),
                (None, Some(t)) => {
                    if !(t.is_finite() && t >= 0.0) {
                        return Err(Error::validation(format!("{field}.time"), format!("must be finite and >= 0, got {t}")));
                    }
                    let s = (t / dt).round() as usize;
                    *stage = Some(s);
                    *time = Some(s as f64 * dt);
                }
                (None, None) => return Err(Error::validation(format!("{field}.stage"), "needs a stage or a time")),
            }
            Ok(())
        };
        for (i, k) in self.keyframes.iter_mut().enumerate() {
            resolve(format!("keyframes[{i}]"), &mut k.stage, &mut k.time)?;
            k.weight.get_or_insert(1.0);
        }
        for (i, k) in self.keytargets.iter_mut().enumerate() {
            resolve(format!("keytargets[{i}]"), &mut k.stage, &mut k.time)?;
        }
        if self.horizon.is_none() {
            let last = self
                .keyframes
                .iter()
                .filter_map(|k| k.stage)
                .chain(self.keytargets.iter().filter_map(|k| k.stage))
                .max()
                .unwrap_or(0);
            self.horizon = Some(last as f64 * dt);
        }
        if self.gains.is_none() {
            self.gains = Some(ControllerGains::default_for(&self.platform));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::validation("version", format!("unsupported version {}, expected 1", self.version)));
        }
        self.platform.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        derive_input_bounds(&self.platform, self.beta)?;
        let horizon = self.horizon.ok_or_else(|| Error::validation("horizon", "missing"))?;
        let steps = horizon / self.dt;
        if !(horizon.is_finite() && horizon > 0.0) || (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::validation(
                "horizon",
                format!("must be a positive multiple of dt = {}, got {horizon}", self.dt),
            ));
        }
        let n = self.num_stages();
        if self.keyframes.len() < 2 {
            return Err(Error::validation("keyframes", "at least 2 keyframes are required"));
        }
        for (i, k) in self.keyframes.iter().enumerate() {
            let stage = k.stage.ok_or_else(|| Error::validation(format!("keyframes[{i}].stage"), "missing"))?;
            if stage >= n {
                return Err(Error::validation(
                    format!("keyframes[{i}].stage"),
                    format!("keyframe.stage out of range: {stage} >= {n} stages"),
                ));
            }
            if k.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("keyframes[{i}].position"), "must be finite"));
            }
            if let Some(w) = k.weight {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::validation(format!("keyframes[{i}].weight"), format!("must be >= 0, got {w}")));
                }
            }
        }
        for (i, k) in self.keytargets.iter().enumerate() {
            let stage = k.stage.ok_or_else(|| Error::validation(format!("keytargets[{i}].stage"), "missing"))?;
            if stage >= n {
                return Err(Error::validation(
                    format!("keytargets[{i}].stage"),
                    format!("keytarget.stage out of range: {stage} >= {n} stages"),
                ));
            }
            if k.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("keytargets[{i}].position"), "must be finite"));
            }
        }
        if !(self.target_half_height.is_finite() && self.target_half_height >= 0.0) {
            return Err(Error::validation("target_half_height", "must be finite and >= 0"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.center.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("obstacles[{i}].center"), "must be finite"));
            }
            if !(o.radius.is_finite() && o.radius > 0.0) {
                return Err(Error::validation(format!("obstacles[{i}].radius"), format!("must be > 0, got {}", o.radius)));
            }
            if !(o.margin.is_finite() && o.margin >= 0.0) {
                return Err(Error::validation(format!("obstacles[{i}].margin"), format!("must be >= 0, got {}", o.margin)));
            }
        }
        if let Some(g) = &self.gimbal_limits {
            g.validate()?;
        }
        if !self.initial_yaw.is_finite() {
            return Err(Error::validation("initial_yaw", "must be finite"));
        }
        if let Some(v) = self.initial_velocity {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation("initial_velocity", "must be finite"));
            }
        }
        self.weights.validate()?;
        for (field, q) in [
            ("derivative_orders.quad_position", self.derivative_orders.quad_position),
            ("derivative_orders.target_position", self.derivative_orders.target_position),
            ("derivative_orders.gimbal_angles", self.derivative_orders.gimbal_angles),
        ] {
            if q == 0 || q >= n {
                return Err(Error::validation(field, format!("order {q} needs 1 <= order < N = {n}")));
            }
        }
        validate_solver(&self.solver)?;
        validate_iqp(&self.iqp)?;
        if let Some(g) = &self.gains {
            g.validate()?;
        }
        let dt_sim = self.simulation.dt_sim;
        if !(dt_sim.is_finite() && dt_sim > 0.0 && dt_sim <= self.dt) {
            return Err(Error::validation("simulation.dt_sim", format!("must lie in (0, dt], got {dt_sim}")));
        }
        Ok(())
    }
}

fn validate_solver(s: &QpSettings) -> Result<()> {
    for (name, v) in [
        ("eps_abs", s.eps_abs),
        ("eps_rel", s.eps_rel),
        ("rho", s.rho),
        ("sigma", s.sigma),
        ("eps_prim_inf", s.eps_prim_inf),
        ("eps_dual_inf", s.eps_dual_inf),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::validation(format!("solver.{name}"), format!("must be finite and > 0, got {v}")));
        }
    }
    if !(s.alpha > 0.0 && s.alpha < 2.0) {
        return Err(Error::validation("solver.alpha", format!("must lie in (0, 2), got {}", s.alpha)));
    }
    if s.max_iter == 0 {
        return Err(Error::validation("solver.max_iter", "must be > 0"));
    }
    if s.ipm_max_iter == 0 {
        return Err(Error::validation("solver.ipm_max_iter", "must be > 0"));
    }
    Ok(())
}

fn validate_iqp(s: &IqpSettings) -> Result<()> {
    if s.max_iterations == 0 {
        return Err(Error::validation("iqp.max_iterations", "must be > 0"));
    }
    for (name, v) in [
        ("min_relative_decrease", s.min_relative_decrease),
        ("min_step", s.min_step),
        ("obstacle_penalty", s.obstacle_penalty),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::validation(format!("iqp.{name}"), format!("must be finite and > 0, got {v}")));
        }
    }
    if !(s.backtrack > 0.0 && s.backtrack < 1.0) {
        return Err(Error::validation("iqp.backtrack", format!("must lie in (0, 1), got {}", s.backtrack)));
    }
    if !(s.proximal_weight.is_finite() && s.proximal_weight >= 0.0) {
        return Err(Error::validation("iqp.proximal_weight", "must be finite and >= 0"));
    }
    Ok(())
}

/// Deserializes, fills defaults and validates a project held as JSON.
pub fn project_from_value(value: Value, options: LoadOptions) -> Result<Project> {
    let mut unknown = Vec::new();
    let mut record = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
    let de = serde_ignored::Deserializer::new(value, &mut record);
    let parsed: std::result::Result<Project, _> = serde_path_to_error::deserialize(de);
    let mut project = parsed.map_err(|e| {
        let path = e.path().to_string();
        Error::validation(if path == "." { "document".into() } else { path }, e.into_inner().to_string())
    })?;
    if !options.lenient {
        if let Some(field) = unknown.into_iter().next() {
            return Err(Error::validation(field, "unknown field"));
        }
    }
    project.materialize()?;
    Ok(project)
}

pub fn parse_project(bytes: &[u8], options: LoadOptions) -> Result<Project> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::validation("document", e.to_string()))?;
    project_from_value(value, options)
}

pub fn load_project(path: impl AsRef<Path>) -> Result<Project> {
    load_project_with(path, LoadOptions::default())
}

pub fn load_project_with(path: impl AsRef<Path>, options: LoadOptions) -> Result<Project> {
    parse_project(&fs::read(path)?, options)
}

pub fn project_to_string(project: &Project) -> String {
    let mut s = serde_json::to_string_pretty(project).expect("project serializes");
    s.push('\n');
    s
}

pub fn save_project(project: &Project, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, project_to_string(project))?;
    Ok(())
}

/// Keys accepted by [`apply_override`].
pub const OVERRIDE_KEYS: [&str; 9] = [
    "lambda_k", "lambda_d", "lambda_t", "lambda_td", "lambda_g", "lambda_c", "lambda_s", "dt", "beta",
];

/// Sets `key` (a weight name, `dt` or `beta`) in a raw project document.
pub fn apply_override(doc: &mut Value, key: &str, value: &str) -> Result<()> {
    let number: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::validation(key, format!("override value {value:?} is not a number")))?;
    let root = doc
        .as_object_mut()
        .ok_or_else(|| Error::validation("document", "must be a JSON object"))?;
    if key.starts_with("lambda_") && OVERRIDE_KEYS.contains(&key) {
        let weights = root.entry("weights").or_insert_with(|| Value::Object(Default::default()));
        let weights = weights
            .as_object_mut()
            .ok_or_else(|| Error::validation("weights", "must be an object"))?;
        weights.insert(key.to_string(), number.into());
    } else if key == "dt" || key == "beta" {
        root.insert(key.to_string(), number.into());
    } else {
        return Err(Error::validation(
            key,
            format!("unknown override; expected one of {}", OVERRIDE_KEYS.join(", ")),
        ));
    }
    Ok(())
}
