//! Nonlinear MPC by direct shooting on the true dynamics. With the
//! time-optimal term disabled this is the standard receding-horizon NMPC;
//! enabling it yields the improved controller.

use nalgebra::DVector;

use crate::cost::{total_cost, CostBreakdown, TimeOptConfig, WeightSet};
use crate::dynamics::{step_rk4, ExternalForce, Input4, QuadParams, State12};
use crate::error::{Error, Result};
use crate::mpc_linear::{HorizonConfig, InputBounds};
use crate::shooting::{minimize_projected, ShootStatus};

/// Integrate the plant forward over N stages, holding each decision move
/// over its stage and repeating the last one beyond the control horizon.
/// Returns all N+1 states including `x0`.
pub fn rollout(
    x0: &State12,
    moves: &[Input4],
    p: &QuadParams,
    dt: f64,
    n: usize,
) -> Result<Vec<State12>> {
    let mut states = Vec::with_capacity(n + 1);
    states.push(*x0);
    let mut x = *x0;
    for k in 0..n {
        let u = moves[k.min(moves.len() - 1)];
        x = step_rk4(&x, &u, p, &ExternalForce::default(), dt).map_err(|e| match e {
            Error::Singularity { pitch } => {
                Error::SimulationAborted(format!("singularity at rollout step {k}: pitch {pitch}"))
            }
            other => other,
        })?;
        states.push(x);
    }
    Ok(states)
}

/// Objective of one candidate move sequence.
///
/// The continuous-time stage cost is approximated by a Riemann sum: the
/// stage weights (state, input and time-optimal) are pre-multiplied by dt,
/// the terminal weight is applied as-is. The input cost charges deviations
/// from the trim input, so holding trim on a met reference costs nothing.
#[allow(clippy::too_many_arguments)]
pub fn nmpc_objective(
    moves: &[Input4],
    x0: &State12,
    refs: &[State12],
    w: &WeightSet,
    hc: &HorizonConfig,
    t_now: f64,
    cfg: &TimeOptConfig,
    p: &QuadParams,
    u_trim: &Input4,
) -> Result<CostBreakdown> {
    if refs.len() != hc.n + 1 {
        return Err(Error::DimensionMismatch {
            expected: hc.n + 1,
            got: refs.len(),
        });
    }
    let states = rollout(x0, moves, p, hc.dt, hc.n)?;
    let stage_w = w.stage_scaled(hc.dt);
    let deviations: Vec<Input4> = moves.iter().map(|u| Input4(u.0 - u_trim.0)).collect();
    total_cost(&states, &deviations, refs, &stage_w, t_now, cfg)
}

/// Result of one NMPC solve.
#[derive(Debug, Clone, Copy)]
pub struct NmpcSolution {
    pub u: Input4,
    pub cost: CostBreakdown,
    pub iterations: usize,
    /// Set when the solve hit its iteration cap (best feasible returned).
    pub max_iterations: bool,
    /// Set when the warm start could not be evaluated (singular rollout);
    /// the warm start itself is returned.
    pub fallback: bool,
}

/// Receding-horizon NMPC controller with warm-start memory.
#[derive(Debug, Clone)]
pub struct NmpcController {
    pub weights: WeightSet,
    pub horizon: HorizonConfig,
    pub bounds: InputBounds,
    pub params: QuadParams,
    pub time_opt: TimeOptConfig,
    u_trim: Input4,
    warm: Vec<Input4>,
}

impl NmpcController {
    pub fn new(
        weights: WeightSet,
        horizon: HorizonConfig,
        bounds: InputBounds,
        params: QuadParams,
        time_opt: TimeOptConfig,
    ) -> Self {
        let u_trim = params.hover_input();
        let warm = vec![u_trim; horizon.n_u];
        NmpcController {
            weights,
            horizon,
            bounds,
            params,
            time_opt,
            u_trim,
            warm,
        }
    }

    pub fn u_trim(&self) -> Input4 {
        self.u_trim
    }

    /// Reset the warm start (used when a run restarts).
    pub fn reset(&mut self) {
        self.warm = vec![self.u_trim; self.horizon.n_u];
    }

    /// Feasible box for the stacked decision: magnitude bounds everywhere,
    /// the rate bound additionally on the first move.
    fn decision_box(&self, u_prev: &Input4) -> (DVector<f64>, DVector<f64>) {
        let n_u = self.horizon.n_u;
        let mut lb = DVector::zeros(4 * n_u);
        let mut ub = DVector::zeros(4 * n_u);
        for j in 0..n_u {
            for i in 0..4 {
                let mut lo = self.bounds.u_min[i];
                let mut hi = self.bounds.u_max[i];
                if j == 0 {
                    lo = lo.max(u_prev[i] - self.bounds.du_max[i]);
                    hi = hi.min(u_prev[i] + self.bounds.du_max[i]);
                    if lo > hi {
                        // Empty intersection: fall back to the magnitude box.
                        lo = self.bounds.u_min[i];
                        hi = self.bounds.u_max[i];
                    }
                }
                lb[j * 4 + i] = lo;
                ub[j * 4 + i] = hi;
            }
        }
        (lb, ub)
    }

    /// Solve the horizon problem and return the first move. The warm start
    /// is the previous solution projected into the current feasible box.
    pub fn solve(
        &mut self,
        x0: &State12,
        refs: &[State12],
        u_prev: &Input4,
        t_now: f64,
    ) -> Result<NmpcSolution> {
        if refs.len() != self.horizon.n + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.horizon.n + 1,
                got: refs.len(),
            });
        }
        let (lb, ub) = self.decision_box(u_prev);

        let mut x_start = DVector::zeros(4 * self.horizon.n_u);
        for (j, u) in self.warm.iter().enumerate() {
            for i in 0..4 {
                x_start[j * 4 + i] = u[i];
            }
        }

        let weights = &self.weights;
        let horizon = &self.horizon;
        let params = &self.params;
        let time_opt = &self.time_opt;
        let u_trim = self.u_trim;
        let objective = |v: &DVector<f64>| -> f64 {
            let moves = unpack_moves(v);
            match nmpc_objective(
                &moves, x0, refs, weights, horizon, t_now, time_opt, params, &u_trim,
            ) {
                Ok(c) => c.total,
                Err(_) => f64::INFINITY,
            }
        };

        let (v, res) = minimize_projected(&objective, &x_start, &lb, &ub);
        let moves = unpack_moves(&v);

        if res.status == ShootStatus::Stalled {
            // Singular rollout from the warm start itself. Hand back the
            // (projected) warm start and flag the failure.
            let u = moves[0];
            self.warm = moves;
            return Ok(NmpcSolution {
                u,
                cost: CostBreakdown::default(),
                iterations: res.iterations,
                max_iterations: false,
                fallback: true,
            });
        }

        let cost = nmpc_objective(
            &moves, x0, refs, weights, horizon, t_now, time_opt, params, &u_trim,
        )?;
        let u = moves[0];
        self.warm = moves;
        Ok(NmpcSolution {
            u,
            cost,
            iterations: res.iterations,
            max_iterations: res.status == ShootStatus::MaxIterations,
            fallback: false,
        })
    }
}

fn unpack_moves(v: &DVector<f64>) -> Vec<Input4> {
    let n_u = v.len() / 4;
    (0..n_u)
        .map(|j| Input4::from_array([v[j * 4], v[j * 4 + 1], v[j * 4 + 2], v[j * 4 + 3]]))
        .collect()
}
