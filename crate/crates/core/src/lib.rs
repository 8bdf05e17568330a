//! Quadrotor flight-control simulation toolkit.
//!
//! The crate provides a rigid-body quadrotor plant with an RK4 integrator,
//! linear and nonlinear model-predictive controllers plus a time-optimal
//! cost extension, an LQR baseline, a three-loop cascade assembly, and a
//! deterministic closed-loop benchmark harness with CSV/SVG artifact export.

pub mod config;
pub mod controller;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod linear;
pub mod mpc_linear;
pub mod mpc_nonlinear;
pub mod qp;
pub mod shooting;
pub mod sim;

#[cfg(test)]
pub(crate) mod test_util;

pub use config::Config;
pub use controller::{ControllerMode, FlightController};
pub use cost::{CostBreakdown, TimeOptConfig, WeightSet};
pub use dynamics::{Input4, QuadParams, State12};
pub use error::{Error, Result};
pub use mpc_linear::{HorizonConfig, InputBounds};
pub use sim::{run_closed_loop, sweep_time_optimal, RunConfig, RunMetrics, Scenario};
