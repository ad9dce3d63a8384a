//! Quadrotor trajectory design.
//!
//! Keyframes and cinematographic goals go in, a dynamically feasible flight
//! plan comes out. Planning works on a linear flat-output model of the vehicle
//! (position, yaw and their rates driven by a world-frame force and a yaw
//! moment), discretized exactly under a zero-order hold. Quadratic objectives
//! are solved as a single sparse QP; camera-angle, skewness and obstacle terms
//! are handled by iterative quadratic programming with a backtracking line
//! search. Plans can be verified against a full nonlinear rigid-body simulation
//! flown by a cascaded position / SO(3) attitude controller.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: vehicle parameters, the discrete flat model, input bounds,
//!   the rotor mixer and the nonlinear equations of motion.
//! - [`costs`]: the stacked decision vector and every energy term.
//! - [`qp`]: a sparse convex QP solver (operator splitting + polish).
//! - [`planner`]: problem assembly, the linear and iterative planners and the
//!   feasibility report.
//! - [`simulator`]: controller and closed-loop tracking simulation.
//! - [`project`]: project files, CSV export and SVG plots.
//! - [`service`] and [`cli`]: the HTTP and command-line front ends.

pub mod cli;
pub mod costs;
pub mod dynamics;
mod error;
pub mod planner;
pub mod project;
pub mod qp;
pub mod service;
pub mod simulator;
pub mod sparse;

pub use error::{Error, Result};
