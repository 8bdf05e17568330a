//! Closed-loop simulation of plant plus controller against the moving-target
//! scenario, per-run error metrics, and the flight-time sweep.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerMode, FlightController};
use crate::cost::{CostBreakdown, TimeOptConfig, WeightSet};
use crate::dynamics::{step_rk4, ExternalForce, Input4, QuadParams, State12};
use crate::error::{Error, Result};
use crate::mpc_linear::{HorizonConfig, InputBounds};

/// Default flight-time threshold [m]: the first instant with all three
/// position errors below it counts as arrival.
pub const FLIGHT_TIME_THRESHOLD: f64 = 0.01;

/// Plant states farther than this from the origin abort the run.
pub const SANITY_RADIUS: f64 = 100.0;

/// The moving-target scenario: a circle at fixed altitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Circle radius [m].
    pub radius: f64,
    /// Revolution period [s].
    pub period: f64,
    /// Target altitude [m].
    pub altitude: f64,
    /// Run length [s].
    pub duration: f64,
    /// Plant integration step [s]. The controller sample time must be an
    /// integer multiple of it.
    pub plant_dt: f64,
    /// Initial plant state.
    pub initial_state: [f64; 12],
    /// Constant world-frame disturbance force [N].
    pub external_force: [f64; 3],
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            radius: 5.0,
            period: 5.0,
            altitude: 0.5,
            duration: 10.0,
            plant_dt: 0.01,
            initial_state: [0.0; 12],
            external_force: [0.0; 3],
        }
    }
}

impl Scenario {
    pub fn validate(&self, ctrl_dt: f64) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidConfig("scenario.duration must be > 0".into()));
        }
        if !(self.plant_dt > 0.0) {
            return Err(Error::InvalidConfig("scenario.plant_dt must be > 0".into()));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidConfig("scenario.period must be > 0".into()));
        }
        if self.radius < 0.0 {
            return Err(Error::InvalidConfig("scenario.radius must be >= 0".into()));
        }
        let ratio = ctrl_dt / self.plant_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "horizon.dt = {ctrl_dt} must be an integer multiple of scenario.plant_dt = {}",
                self.plant_dt
            )));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "scenario.initial_state must be finite".into(),
            ));
        }
        if self.external_force.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "scenario.external_force must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn initial(&self) -> State12 {
        State12::from_array(self.initial_state)
    }
}

/// Reference state at time `t`: the parametric circle with its analytic
/// velocity; angles and rates zero.
pub fn target_at(t: f64, sc: &Scenario) -> State12 {
    let omega = 2.0 * std::f64::consts::PI / sc.period;
    let phase = omega * t;
    let mut r = State12::zeros();
    r[0] = sc.radius * phase.cos();
    r[1] = sc.radius * phase.sin();
    r[2] = sc.altitude;
    r[6] = -sc.radius * omega * phase.sin();
    r[7] = sc.radius * omega * phase.cos();
    r
}

/// One recorded plant step.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub t: f64,
    pub state: State12,
    pub target: Vector3<f64>,
    pub input: Input4,
    pub cost: CostBreakdown,
}

/// Per-run error metrics plus the full trace.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    /// Sum of absolute per-axis position errors over all recorded steps.
    pub total_err: [f64; 3],
    /// Smallest absolute per-axis position error over the run.
    pub min_err: [f64; 3],
    /// Earliest time at which all three axis errors were under the
    /// threshold simultaneously; `None` if that never happened.
    pub flight_time: Option<f64>,
    pub trace: Vec<TraceRow>,
}

impl RunMetrics {
    pub fn empty() -> Self {
        RunMetrics {
            total_err: [0.0; 3],
            min_err: [f64::INFINITY; 3],
            flight_time: None,
            trace: Vec::new(),
        }
    }
}

/// Reduce a trace to its metrics.
pub fn compute_metrics(trace: &[TraceRow], threshold: f64) -> RunMetrics {
    let mut total = [0.0; 3];
    let mut min = [f64::INFINITY; 3];
    let mut flight_time = None;
    for row in trace {
        let pos = row.state.position();
        let mut under = true;
        for a in 0..3 {
            let e = (pos[a] - row.target[a]).abs();
            total[a] += e;
            if e < min[a] {
                min[a] = e;
            }
            if e >= threshold {
                under = false;
            }
        }
        if under && flight_time.is_none() {
            flight_time = Some(row.t);
        }
    }
    RunMetrics {
        total_err: total,
        min_err: min,
        flight_time,
        trace: trace.to_vec(),
    }
}

/// Bundle of controller-side configuration for a run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: ControllerMode,
    pub weights: WeightSet,
    pub horizon: HorizonConfig,
    pub bounds: InputBounds,
    pub time_opt: TimeOptConfig,
    pub params: QuadParams,
    pub threshold: f64,
}

/// Run the closed loop: zero-order-hold control at the controller rate,
/// plant stepped with RK4 at the plant rate, one trace row per plant step.
/// Deterministic; no randomness anywhere.
pub fn run_closed_loop(sc: &Scenario, rc: &RunConfig) -> Result<RunMetrics> {
    sc.validate(rc.horizon.dt)?;
    let mut ctl = FlightController::new(
        rc.mode,
        rc.params.clone(),
        rc.weights.clone(),
        rc.horizon,
        rc.bounds,
        rc.time_opt,
    )?;

    let plant_steps = (sc.duration / sc.plant_dt).round() as usize;
    if plant_steps == 0 {
        return Ok(RunMetrics::empty());
    }
    let hold = (rc.horizon.dt / sc.plant_dt).round() as usize;
    let f_ext = ExternalForce(Vector3::new(
        sc.external_force[0],
        sc.external_force[1],
        sc.external_force[2],
    ));

    let mut x = sc.initial();
    let mut trace = Vec::with_capacity(plant_steps);
    let mut u = rc.params.hover_input();
    let mut cost = CostBreakdown::default();

    for step in 0..plant_steps {
        let t = step as f64 * sc.plant_dt;
        if step % hold == 0 {
            // Reference window from the analytic target expressions, one
            // entry per controller stage.
            let refs: Vec<State12> = (0..=rc.horizon.n)
                .map(|k| target_at(t + k as f64 * rc.horizon.dt, sc))
                .collect();
            let out = ctl.step(&x, &refs, t)?;
            u = out.u;
            cost = out.cost;
        }
        let target = target_at(t, sc);
        trace.push(TraceRow {
            t,
            state: x,
            target: target.position(),
            input: u,
            cost,
        });

        x = step_rk4(&x, &u, &rc.params, &f_ext, sc.plant_dt).map_err(|e| {
            Error::SimulationAborted(format!("plant integration failed at t = {t}: {e}"))
        })?;
        if !x.is_finite() {
            return Err(Error::SimulationAborted(format!(
                "state became non-finite at t = {t}"
            )));
        }
        if x.position().norm() > SANITY_RADIUS {
            return Err(Error::SimulationAborted(format!(
                "state left the {SANITY_RADIUS} m sanity sphere at t = {t} (position {:?})",
                x.position()
            )));
        }
    }

    Ok(compute_metrics(&trace, rc.threshold))
}

/// One row of the flight-time sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    pub t_o: Option<f64>,
    pub outcome: std::result::Result<RunMetrics, String>,
}

/// Run the LQR baseline, the standard NMPC, and one improved-controller row
/// per requested optimal time. The MPC rows use the cascade assembly, the
/// deployable controller this toolkit benchmarks. Rows are independent and
/// run in parallel; the output preserves input order.
pub fn sweep_time_optimal(sc: &Scenario, base: &RunConfig, t_o_list: &[f64]) -> Vec<SweepRow> {
    let mut jobs: Vec<(String, Option<f64>, ControllerMode)> = vec![
        ("LQR".to_string(), None, ControllerMode::Lqr),
        ("MPC".to_string(), None, ControllerMode::CascadeNMPC),
    ];
    for t_o in t_o_list {
        jobs.push((
            format!("IMPC t_o={t_o}"),
            Some(*t_o),
            ControllerMode::CascadeIMPC,
        ));
    }

    jobs.into_par_iter()
        .map(|(label, t_o, mode)| {
            let mut rc = base.clone();
            rc.mode = mode;
            if let Some(v) = t_o {
                rc.time_opt = TimeOptConfig {
                    t_o: v,
                    enabled: true,
                };
            }
            let outcome = run_closed_loop(sc, &rc).map_err(|e| e.to_string());
            SweepRow {
                label,
                t_o,
                outcome,
            }
        })
        .collect()
}
