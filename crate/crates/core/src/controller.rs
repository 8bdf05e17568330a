//! Deployable controller assemblies: monolithic full-state MPC in its
//! linear, nonlinear and time-optimal variants, the three-loop cascade
//! (altitude, planar position, attitude), and the LQR baseline. All of them
//! end in the same mixer/rate-limiter stage and share one configuration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{time_opt_factor, CostBreakdown, TimeOptConfig, WeightSet};
use crate::dynamics::{Input4, QuadParams, State12, Wrench};
use crate::error::{Error, Result};
use crate::linear::{lqr_gain, LinearModel, LqrGain};
use crate::mpc_linear::{lmpc_step, HorizonConfig, InputBounds};
use crate::mpc_nonlinear::NmpcController;
use crate::shooting::minimize_projected;

/// Attitude references from the planar loop are kept inside this tilt.
/// The planar command is converted with the exact static inversion
/// (theta = atan(a/g)), so the guard only has to keep the attitude loop,
/// overshoot included, away from the pitch singularity.
pub const TILT_GUARD: f64 = 0.8;

/// First-order lag [s] with which the planar loop models the attitude
/// loop's tracking of its tilt references. Ignoring this lag makes the
/// planar plans overshoot hard at high bank angles.
pub const PLANAR_ACCEL_LAG: f64 = 0.15;

/// Planar-loop horizon: the global prediction horizon with several free
/// moves and a trim tail, so plans can brake.
pub const PLANAR_CONTROL_HORIZON: usize = 6;

/// Horizon of the inner regulators (attitude, altitude). These are fast
/// loops, not preview problems: a short horizon with room for an
/// accelerate-then-brake pattern settles at the physical timescale.
pub const INNER_HORIZON: usize = 6;
/// Free moves of the inner regulators.
pub const INNER_CONTROL_HORIZON: usize = 3;

/// Rate-state weight of the attitude loop relative to its angle weight.
/// Equal weighting would cap the loop bandwidth near 1 rad/s; the tilt
/// references rotate at the orbit rate and need a decade of headroom.
pub const ATTITUDE_RATE_DAMPING: f64 = 0.08;
/// Vertical-velocity weight of the altitude loop relative to its position
/// weight.
pub const ALTITUDE_VEL_DAMPING: f64 = 0.1;
/// Slew limit on the emitted tilt references [rad/s]; smooths replanning
/// jumps so they cannot excite the attitude loop toward the singularity.
pub const TILT_REF_SLEW: f64 = 3.0;
/// Cap on the combined tilt magnitude of the references [rad].
pub const TILT_TOTAL_CAP: f64 = 0.85;

/// Saturation level of the time-optimal weight inside the cascade loops;
/// the raw factor f becomes sat * f / (1 + f).
pub const CASCADE_JI_SATURATION: f64 = 0.7;
/// Position-error share of the planar loop's time-optimal term.
pub const PLANAR_JI_STIFFNESS: f64 = 1.0;
/// Velocity-error share of the planar loop's time-optimal term.
pub const PLANAR_JI_DAMPING: f64 = 1.0;
/// Terminal-weight multiplier of the planar loop; a terminal-heavy plan
/// arrives with matched velocity, which keeps the capture free of ringing.
pub const PLANAR_TERMINAL_WEIGHT: f64 = 2.0;

/// Weight on input steps in the velocity-form LQR design, relative to the
/// input-deviation weight. The baseline is designed on the input-augmented
/// model so the gain respects the per-step rate limit instead of fighting
/// it.
pub const LQR_STEP_WEIGHT: f64 = 10.0;

/// Far-field guard for the LQR baseline: the error vector fed to the gain
/// is scaled down uniformly so its position part stays inside this radius.
/// Beyond it the saturated, rate-limited channels cannot follow the linear
/// law and the plant flips; inside it the law is the plain LQR.
pub const LQR_ERROR_POS_CAP: f64 = 1.0;
/// Tilt at which the LQR starts fading out position pursuit [rad].
pub const LQR_TILT_GUARD_LO: f64 = 0.35;
/// Tilt at which position pursuit is fully suspended [rad].
pub const LQR_TILT_GUARD_HI: f64 = 0.55;
/// Companion cap on the velocity error magnitude [m/s].
pub const LQR_ERROR_VEL_CAP: f64 = 2.0;

/// Which controller drives the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerMode {
    MonolithicLMPC,
    MonolithicNMPC,
    MonolithicIMPC,
    CascadeNMPC,
    CascadeIMPC,
    #[serde(rename = "LQR")]
    Lqr,
}

impl ControllerMode {
    pub fn uses_time_optimal_term(&self) -> bool {
        matches!(
            self,
            ControllerMode::MonolithicIMPC | ControllerMode::CascadeIMPC
        )
    }

    pub fn all() -> [ControllerMode; 6] {
        [
            ControllerMode::MonolithicLMPC,
            ControllerMode::MonolithicNMPC,
            ControllerMode::MonolithicIMPC,
            ControllerMode::CascadeNMPC,
            ControllerMode::CascadeIMPC,
            ControllerMode::Lqr,
        ]
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ControllerMode::MonolithicLMPC => "MonolithicLMPC",
            ControllerMode::MonolithicNMPC => "MonolithicNMPC",
            ControllerMode::MonolithicIMPC => "MonolithicIMPC",
            ControllerMode::CascadeNMPC => "CascadeNMPC",
            ControllerMode::CascadeIMPC => "CascadeIMPC",
            ControllerMode::Lqr => "LQR",
        };
        f.write_str(s)
    }
}

/// Intermediate signals of one cascade step, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeSetpoints {
    /// Thrust command from the altitude loop [N].
    pub thrust: f64,
    /// Roll reference handed to the attitude loop [rad].
    pub phi_ref: f64,
    /// Pitch reference handed to the attitude loop [rad].
    pub theta_ref: f64,
    /// Yaw torque emitted by the attitude loop [N m].
    pub tau_psi: f64,
}

/// Output of one controller step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub u: Input4,
    pub cost: CostBreakdown,
}

/// Invert the rotor allocation for a commanded wrench, then clamp each
/// channel into the magnitude box. The 4x4 allocation is exactly invertible
/// for positive thrust/arm/drag coefficients.
pub fn mix(wrench_cmd: &Wrench, p: &QuadParams, b: &InputBounds) -> Input4 {
    let s = wrench_cmd.thrust / p.thrust_coeff;
    let a = wrench_cmd.torque[0] / (p.arm_length * p.thrust_coeff);
    let c = wrench_cmd.torque[1] / (p.arm_length * p.thrust_coeff);
    let d = wrench_cmd.torque[2] / p.drag_torque_coeff;
    let pg = (s + d) / 2.0; // u1 + u3
    let qg = (s - d) / 2.0; // u2 + u4
    let u = Input4::from_array([
        (pg - c) / 2.0,
        (qg - a) / 2.0,
        (pg + c) / 2.0,
        (qg + a) / 2.0,
    ]);
    b.clamp_magnitude(&u)
}

/// Clamp a command into the per-step rate box around the previous input,
/// then into the magnitude box.
pub fn rate_limit(u_prev: &Input4, u_cmd: &Input4, b: &InputBounds) -> Input4 {
    let mut out = *u_cmd;
    for i in 0..4 {
        out[i] = out[i]
            .clamp(u_prev[i] - b.du_max[i], u_prev[i] + b.du_max[i])
            .clamp(b.u_min[i], b.u_max[i]);
    }
    out
}

/// Classical RK4 step for the small cascade submodels.
fn rk4_sub<const D: usize>(x: [f64; D], dt: f64, f: impl Fn(&[f64; D]) -> [f64; D]) -> [f64; D] {
    let add = |a: &[f64; D], b: &[f64; D], s: f64| {
        let mut out = *a;
        for i in 0..D {
            out[i] += b[i] * s;
        }
        out
    };
    let k1 = f(&x);
    let k2 = f(&add(&x, &k1, dt / 2.0));
    let k3 = f(&add(&x, &k2, dt / 2.0));
    let k4 = f(&add(&x, &k3, dt));
    let mut out = x;
    for i in 0..D {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One small direct-shooting subproblem of the cascade. `D` is the substate
/// dimension, `M` the per-stage decision dimension. `refs` holds one
/// reference per stage 0..=N.
struct SubProblem<'a, const D: usize, const M: usize> {
    x0: [f64; D],
    refs: &'a [[f64; D]],
    q: [f64; D],
    p: [f64; D],
    qi: [f64; D],
    r: [f64; M],
    u_trim: [f64; M],
    lb: [f64; M],
    ub: [f64; M],
    n: usize,
    n_u: usize,
    dt: f64,
    ji_factor: f64,
    /// Tail semantics past the control horizon: hold the last free move
    /// (outer loops: the command persists until re-planned) or revert to
    /// trim (inner loops: expresses accelerate-then-brake patterns).
    hold_last: bool,
    /// Steep quadratic barrier on |x_i| for i < barrier_dims, starting at
    /// the given limit. Keeps attitude plans clear of the Euler singularity.
    barrier: Option<(usize, f64)>,
}

impl<'a, const D: usize, const M: usize> SubProblem<'a, D, M> {
    /// Solve by projected gradient; returns the first move and the cost
    /// breakdown of the solution. The dynamics closure receives the stage
    /// index so per-stage feedforward terms can enter the model.
    fn solve(
        &self,
        warm: &mut Vec<f64>,
        dynamics: impl Fn(&[f64; D], &[f64; M], usize) -> [f64; D] + Copy,
    ) -> ([f64; M], CostBreakdown) {
        let n_u = self.n_u;
        let dt = self.dt;
        let n = self.n;

        let objective = |v: &DVector<f64>| -> CostBreakdown {
            let mut x = self.x0;
            let (mut jx, mut ju, mut ji) = (0.0, 0.0, 0.0);
            // Stage 0 error enters the stage and time-optimal sums.
            for k in 0..n {
                for i in 0..D {
                    let e = x[i] - self.refs[k][i];
                    jx += dt * self.q[i] * e * e;
                    ji += dt * self.qi[i] * e * e;
                }
                if let Some((dims, limit)) = self.barrier {
                    for i in 0..dims.min(D) {
                        let excess = x[i].abs() - limit;
                        if excess > 0.0 {
                            jx += 1e4 * excess * excess;
                        }
                    }
                }
                let mut u = self.u_trim;
                if k < n_u {
                    for i in 0..M {
                        u[i] = v[k * M + i];
                    }
                } else if self.hold_last {
                    for i in 0..M {
                        u[i] = v[(n_u - 1) * M + i];
                    }
                }
                x = rk4_sub(x, dt, |s| dynamics(s, &u, k));
            }
            for j in 0..n_u {
                for i in 0..M {
                    let du = v[j * M + i] - self.u_trim[i];
                    ju += dt * self.r[i] * du * du;
                }
            }
            let mut jp = 0.0;
            for i in 0..D {
                let e = x[i] - self.refs[n][i];
                jp += self.p[i] * e * e;
            }
            CostBreakdown::sum(jx, ju, jp, ji * self.ji_factor)
        };
        let scalar = |v: &DVector<f64>| objective(v).total;

        let mut lb = DVector::zeros(n_u * M);
        let mut ub = DVector::zeros(n_u * M);
        let mut x_start = DVector::zeros(n_u * M);
        for j in 0..n_u {
            for i in 0..M {
                lb[j * M + i] = self.lb[i];
                ub[j * M + i] = self.ub[i];
                x_start[j * M + i] = warm.get(j * M + i).copied().unwrap_or(self.u_trim[i]);
            }
        }

        let (v, _) = minimize_projected(&scalar, &x_start, &lb, &ub);
        let cost = objective(&v);
        *warm = v.iter().copied().collect();
        let mut first = [0.0; M];
        for i in 0..M {
            first[i] = v[i];
        }
        (first, cost)
    }
}

/// Warm-start memory of the cascade loops.
#[derive(Debug, Clone, Default)]
struct CascadeMemory {
    altitude: Vec<f64>,
    planar: Vec<f64>,
    attitude: Vec<f64>,
    /// Last emitted tilt references for the slew limiter.
    last_tilt: Option<(f64, f64)>,
}

/// A complete controller assembly driven by one closed loop.
pub struct FlightController {
    pub mode: ControllerMode,
    pub params: QuadParams,
    pub weights: WeightSet,
    pub horizon: HorizonConfig,
    pub bounds: InputBounds,
    pub time_opt: TimeOptConfig,
    u_prev: Input4,
    model: Option<LinearModel>,
    lqr: Option<LqrGain>,
    nmpc: Option<NmpcController>,
    cascade: CascadeMemory,
    last_setpoints: Option<CascadeSetpoints>,
}

impl FlightController {
    pub fn new(
        mode: ControllerMode,
        params: QuadParams,
        weights: WeightSet,
        horizon: HorizonConfig,
        bounds: InputBounds,
        time_opt: TimeOptConfig,
    ) -> Result<Self> {
        horizon.validate()?;
        bounds.validate()?;
        weights.validate()?;
        params.validate()?;

        // The time-optimal term is governed by the mode.
        let effective_time_opt = TimeOptConfig {
            t_o: time_opt.t_o,
            enabled: mode.uses_time_optimal_term(),
        };
        effective_time_opt.validate()?;

        let model = match mode {
            ControllerMode::MonolithicLMPC | ControllerMode::Lqr => {
                Some(LinearModel::hover(&params, horizon.dt)?)
            }
            _ => None,
        };
        let lqr = match (&mode, &model) {
            (ControllerMode::Lqr, Some(m)) => {
                // Velocity-form design: the state is augmented with the
                // previous input and the decision is the input step, so the
                // gain is shaped for the rate-limited channels. The state
                // weight carries Q on the plant part and R on the input
                // deviation (the standard input cost), while input steps
                // are charged separately.
                let mut a_aug = DMatrix::zeros(16, 16);
                a_aug.view_mut((0, 0), (12, 12)).copy_from(&m.ad);
                a_aug.view_mut((0, 12), (12, 4)).copy_from(&m.bd);
                a_aug
                    .view_mut((12, 12), (4, 4))
                    .copy_from(&DMatrix::identity(4, 4));
                let mut b_aug = DMatrix::zeros(16, 4);
                b_aug.view_mut((0, 0), (12, 4)).copy_from(&m.bd);
                b_aug
                    .view_mut((12, 0), (4, 4))
                    .copy_from(&DMatrix::identity(4, 4));
                let mut q_diag = DVector::zeros(16);
                for i in 0..12 {
                    q_diag[i] = weights.q[i];
                }
                for i in 0..4 {
                    q_diag[12 + i] = weights.r[i];
                }
                let q_aug = DMatrix::from_diagonal(&q_diag);
                let r_step = DMatrix::from_diagonal(&DVector::from_row_slice(
                    &weights.r.map(|v| v * LQR_STEP_WEIGHT),
                ));
                Some(lqr_gain(
                    &a_aug,
                    &b_aug,
                    &q_aug,
                    &r_step,
                    params.hover_input(),
                )?)
            }
            _ => None,
        };
        let nmpc = match mode {
            ControllerMode::MonolithicNMPC | ControllerMode::MonolithicIMPC => {
                Some(NmpcController::new(
                    weights.clone(),
                    horizon,
                    bounds,
                    params.clone(),
                    effective_time_opt,
                ))
            }
            _ => None,
        };

        let u_prev = params.hover_input();
        Ok(FlightController {
            mode,
            params,
            weights,
            horizon,
            bounds,
            time_opt: effective_time_opt,
            u_prev,
            model,
            lqr,
            nmpc,
            cascade: CascadeMemory::default(),
            last_setpoints: None,
        })
    }

    /// The previous emitted input (initialized at hover trim).
    pub fn previous_input(&self) -> Input4 {
        self.u_prev
    }

    /// Intermediate cascade signals of the last step, when in a cascade mode.
    pub fn last_setpoints(&self) -> Option<CascadeSetpoints> {
        self.last_setpoints
    }

    /// Compute the input for the current state against a reference window
    /// (one state per horizon stage, `N + 1` entries), advance the internal
    /// warm-start and rate-limiter memory, and return the move. Memoryless
    /// modes (LQR) track the window's first entry.
    pub fn step(&mut self, x: &State12, refs: &[State12], t_now: f64) -> Result<StepOutput> {
        if !x.is_finite() {
            return Err(Error::SimulationAborted(
                "non-finite state entered controller".into(),
            ));
        }
        // One reference per horizon stage; extra entries are permitted and
        // ignored.
        if refs.len() < self.horizon.n + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.horizon.n + 1,
                got: refs.len(),
            });
        }
        let out = match self.mode {
            ControllerMode::MonolithicLMPC => self.step_lmpc(x, refs)?,
            ControllerMode::MonolithicNMPC | ControllerMode::MonolithicIMPC => {
                self.step_nmpc(x, refs, t_now)?
            }
            ControllerMode::CascadeNMPC | ControllerMode::CascadeIMPC => {
                self.step_cascade(x, refs, t_now)?
            }
            ControllerMode::Lqr => self.step_lqr(x, &refs[0])?,
        };
        self.u_prev = out.u;
        Ok(out)
    }

    /// Point-to-point convenience entry: the target state is held over the
    /// whole horizon (no trajectory data beyond the point is available).
    pub fn step_to_point(
        &mut self,
        x: &State12,
        target: &State12,
        t_now: f64,
    ) -> Result<StepOutput> {
        let refs = vec![*target; self.horizon.n + 1];
        self.step(x, &refs, t_now)
    }

    fn step_lmpc(&mut self, x: &State12, refs: &[State12]) -> Result<StepOutput> {
        let model = self.model.as_ref().expect("LMPC mode holds a model");
        let window = &refs[..self.horizon.n + 1];
        let (u, _) = lmpc_step(
            x,
            window,
            &self.u_prev,
            model,
            &self.weights,
            &self.horizon,
            &self.bounds,
        )?;
        let u = rate_limit(&self.u_prev, &u, &self.bounds);
        Ok(StepOutput {
            u,
            cost: CostBreakdown::default(),
        })
    }

    fn step_nmpc(&mut self, x: &State12, refs: &[State12], t_now: f64) -> Result<StepOutput> {
        let nmpc = self.nmpc.as_mut().expect("NMPC mode holds a solver");
        let window = &refs[..self.horizon.n + 1];
        let sol = nmpc.solve(x, window, &self.u_prev, t_now)?;
        let u = rate_limit(&self.u_prev, &sol.u, &self.bounds);
        Ok(StepOutput { u, cost: sol.cost })
    }

    fn step_lqr(&mut self, x: &State12, target: &State12) -> Result<StepOutput> {
        let gain = self.lqr.as_ref().expect("LQR mode holds a gain");
        let mut err = DVector::zeros(16);
        for i in 0..12 {
            err[i] = x[i] - target[i];
        }
        for i in 0..4 {
            err[12 + i] = self.u_prev[i] - gain.u0[i];
        }
        // Far-field clip: the plant/velocity error fed to the gain stays in
        // the region where the linear design is meaningful.
        let pos_norm = err.rows(0, 3).norm();
        let vel_norm = err.rows(6, 3).norm();
        let mut scale = 1.0f64;
        if pos_norm > LQR_ERROR_POS_CAP {
            scale = scale.min(LQR_ERROR_POS_CAP / pos_norm);
        }
        if vel_norm > LQR_ERROR_VEL_CAP {
            scale = scale.min(LQR_ERROR_VEL_CAP / vel_norm);
        }
        // Envelope protection: position pursuit fades out as the measured
        // tilt leaves the linear design's validity region, leaving pure
        // attitude recovery.
        let tilt = (x[3] * x[3] + x[4] * x[4]).sqrt();
        let guard =
            ((LQR_TILT_GUARD_HI - tilt) / (LQR_TILT_GUARD_HI - LQR_TILT_GUARD_LO)).clamp(0.0, 1.0);
        scale *= guard;
        for i in 0..3 {
            err[i] *= scale;
            err[6 + i] *= scale;
        }
        let step = &gain.k * err;
        let mut u = self.u_prev;
        for i in 0..4 {
            u[i] -= step[i];
        }
        let u = rate_limit(&self.u_prev, &self.bounds.clamp_magnitude(&u), &self.bounds);
        Ok(StepOutput {
            u,
            cost: CostBreakdown::default(),
        })
    }

    fn step_cascade(&mut self, x: &State12, refs: &[State12], t_now: f64) -> Result<StepOutput> {
        let p = &self.params;
        let w = &self.weights;
        let hc = self.horizon;
        let ji_factor = if self.time_opt.enabled {
            // Smoothly saturated time-optimal weight: the raw factor spans
            // two orders of magnitude across the t_o range and would detune
            // the loops far past their margins; f/(1+f) keeps its shape
            // (zero at t_o, monotone on both sides) while bounding it.
            let f = time_opt_factor(w.alpha, t_now, self.time_opt.t_o);
            CASCADE_JI_SATURATION * f / (1.0 + f)
        } else {
            0.0
        };
        let k = p.thrust_coeff;
        let lk = p.arm_length * k;
        let b_yaw = p.drag_torque_coeff;
        let g = p.gravity;
        let mass = p.mass;
        let r_sum: f64 = w.r.iter().sum();

        // 1. Altitude loop: thrust from the (z, vz) submodel.
        let t_hover = p.hover_thrust();
        let t_max = k * self.bounds.u_max.iter().sum::<f64>();
        let t_min = k * self.bounds.u_min.iter().sum::<f64>();
        let drag_z = p.linear_drag[2];
        let alt_refs: Vec<[f64; 2]> = refs.iter().map(|r| [r[2], r[8]]).collect();
        let alt = SubProblem::<2, 1> {
            x0: [x[2], x[8]],
            refs: &alt_refs,
            q: [w.q[2], w.q[8] * ALTITUDE_VEL_DAMPING],
            p: [w.p[2], w.p[8] * ALTITUDE_VEL_DAMPING],
            qi: [w.qi[2], w.qi[8] * ALTITUDE_VEL_DAMPING],
            // Symmetric thrust splits as T/(4k) per channel.
            r: [r_sum / (16.0 * k * k)],
            u_trim: [t_hover],
            lb: [t_min],
            ub: [t_max],
            n: INNER_HORIZON.min(hc.n),
            n_u: INNER_CONTROL_HORIZON.min(INNER_HORIZON.min(hc.n)),
            dt: hc.dt,
            ji_factor,
            hold_last: false,
            barrier: None,
        };
        let ([thrust_cmd], cost_alt) = alt.solve(&mut self.cascade.altitude, move |s, u, _| {
            [s[1], u[0] / mass - g - drag_z * s[1] / mass]
        });

        // 2. Planar loop: desired accelerations for (x, y, vx, vy), bounded
        //    by the tilt guard through the exact tilt inversion. The model
        //    carries the achieved acceleration as a lag state, initialized
        //    from the measured tilt, so plans respect the attitude loop's
        //    response time.
        let a_max = g * TILT_GUARD.tan();
        let drag_x = p.linear_drag[0];
        let drag_y = p.linear_drag[1];
        let ax_now = g * x[4].tan();
        let ay_now = -g * x[3].tan();
        // Reference acceleration per stage from the reference velocities;
        // this carries the curvature of a moving target so the feedback
        // part of the loop only handles deviations. Central differences
        // keep the feedforward phase-aligned with the stages.
        let a_ff: Vec<[f64; 2]> = (0..=hc.n)
            .map(|k| {
                let next = (k + 1).min(hc.n);
                let prev = k.saturating_sub(1);
                let span = (next - prev) as f64 * hc.dt;
                [
                    (refs[next][6] - refs[prev][6]) / span,
                    (refs[next][7] - refs[prev][7]) / span,
                ]
            })
            .collect();
        let planar_refs: Vec<[f64; 6]> = (0..=hc.n)
            .map(|k| {
                let r = refs[k];
                [r[0], r[1], r[6], r[7], 0.0, 0.0]
            })
            .collect();
        let planar = SubProblem::<6, 2> {
            x0: [
                x[0],
                x[1],
                x[6],
                x[7],
                ax_now - a_ff[0][0],
                ay_now - a_ff[0][1],
            ],
            refs: &planar_refs,
            q: [w.q[0], w.q[1], w.q[6], w.q[7], 0.0, 0.0],
            p: [
                w.p[0] * PLANAR_TERMINAL_WEIGHT,
                w.p[1] * PLANAR_TERMINAL_WEIGHT,
                w.p[6] * PLANAR_TERMINAL_WEIGHT,
                w.p[7] * PLANAR_TERMINAL_WEIGHT,
                0.0,
                0.0,
            ],
            qi: [
                w.qi[0] * PLANAR_JI_STIFFNESS,
                w.qi[1] * PLANAR_JI_STIFFNESS,
                w.qi[6] * PLANAR_JI_DAMPING,
                w.qi[7] * PLANAR_JI_DAMPING,
                0.0,
                0.0,
            ],
            // Tilting redistributes rotor commands without changing their
            // sum, so only a small regularizer is charged here.
            r: [1e-4, 1e-4],
            u_trim: [0.0, 0.0],
            lb: [-a_max, -a_max],
            ub: [a_max, a_max],
            n: hc.n,
            n_u: PLANAR_CONTROL_HORIZON.min(hc.n),
            dt: hc.dt,
            ji_factor,
            hold_last: false,
            barrier: None,
        };
        let ff = &a_ff;
        let ([ax_fb, ay_fb], cost_pl) = planar.solve(&mut self.cascade.planar, move |s, u, k| {
            [
                s[2],
                s[3],
                s[4] + ff[k][0] - drag_x * s[2] / mass,
                s[5] + ff[k][1] - drag_y * s[3] / mass,
                (u[0] - s[4]) / PLANAR_ACCEL_LAG,
                (u[1] - s[5]) / PLANAR_ACCEL_LAG,
            ]
        });

        // Desired tilt trajectory over the horizon: the first feedback move
        // plus the per-stage feedforward, inverted exactly, so the attitude
        // loop tracks a rotating reference with matching rates instead of a
        // frozen snapshot. Inversion under the altitude loop's
        // tilt-compensated thrust (T = m g / (cos phi cos theta), yaw 0):
        //   ax = g tan(theta), ay = -g tan(phi) / cos(theta).
        let invert = |ax: f64, ay: f64| -> (f64, f64) {
            let theta = (ax / g).atan().clamp(-TILT_GUARD, TILT_GUARD);
            let phi = (-ay * theta.cos() / g)
                .atan()
                .clamp(-TILT_GUARD, TILT_GUARD);
            // Keep the combined tilt inside the cap, preserving direction.
            let norm = (theta * theta + phi * phi).sqrt();
            if norm > TILT_TOTAL_CAP {
                (phi * TILT_TOTAL_CAP / norm, theta * TILT_TOTAL_CAP / norm)
            } else {
                (phi, theta)
            }
        };
        let mut tilt_traj: Vec<(f64, f64)> = (0..=hc.n)
            .map(|k| {
                let ax = (ax_fb + a_ff[k][0]).clamp(-a_max, a_max);
                let ay = (ay_fb + a_ff[k][1]).clamp(-a_max, a_max);
                invert(ax, ay)
            })
            .collect();
        // Slew-limit the head of the trajectory against the last emitted
        // references.
        if let Some((lp, lt)) = self.cascade.last_tilt {
            let max_step = TILT_REF_SLEW * hc.dt;
            tilt_traj[0] = (
                lp + (tilt_traj[0].0 - lp).clamp(-max_step, max_step),
                lt + (tilt_traj[0].1 - lt).clamp(-max_step, max_step),
            );
        }
        let (phi_ref, theta_ref) = tilt_traj[0];
        self.cascade.last_tilt = Some((phi_ref, theta_ref));

        // 3. Attitude loop: torques tracking the tilt trajectory and the
        //    yaw reference.
        let tau_rp_max = lk * (self.bounds.u_max[0] - self.bounds.u_min[0]);
        let tau_y_max = 2.0 * b_yaw * (self.bounds.u_max[0] - self.bounds.u_min[0]);
        let inertia = p.inertia;
        let att_refs: Vec<[f64; 6]> = (0..=hc.n)
            .map(|k| {
                let next = (k + 1).min(hc.n);
                let prev = next - 1;
                let rate_phi = (tilt_traj[next].0 - tilt_traj[prev].0) / hc.dt;
                let rate_theta = (tilt_traj[next].1 - tilt_traj[prev].1) / hc.dt;
                [
                    tilt_traj[k].0,
                    tilt_traj[k].1,
                    refs[k][5],
                    rate_phi,
                    rate_theta,
                    0.0,
                ]
            })
            .collect();
        // Rate damping applies evenly to all three axes, scaled well below
        // the angle weights; the stock 12-state diagonal would either leave
        // pitch/yaw rates free or cap the loop bandwidth near 1 rad/s.
        let damp = |qa: f64| qa * ATTITUDE_RATE_DAMPING;
        let att = SubProblem::<6, 3> {
            x0: [x[3], x[4], x[5], x[9], x[10], x[11]],
            refs: &att_refs,
            q: [
                w.q[3],
                w.q[4],
                w.q[5],
                damp(w.q[3]),
                damp(w.q[4]),
                damp(w.q[5]),
            ],
            p: [
                w.p[3],
                w.p[4],
                w.p[5],
                damp(w.p[3]),
                damp(w.p[4]),
                damp(w.p[5]),
            ],
            qi: [
                w.qi[3],
                w.qi[4],
                w.qi[5],
                damp(w.qi[9]),
                damp(w.qi[10]),
                damp(w.qi[11]),
            ],
            // Torque costs mapped through the minimum-norm mixer inverse.
            r: [
                r_sum / 4.0 / (2.0 * lk * lk),
                r_sum / 4.0 / (2.0 * lk * lk),
                r_sum / 4.0 / (4.0 * b_yaw * b_yaw),
            ],
            u_trim: [0.0, 0.0, 0.0],
            lb: [-tau_rp_max, -tau_rp_max, -tau_y_max],
            ub: [tau_rp_max, tau_rp_max, tau_y_max],
            n: INNER_HORIZON.min(hc.n),
            n_u: INNER_CONTROL_HORIZON.min(INNER_HORIZON.min(hc.n)),
            dt: hc.dt,
            ji_factor,
            hold_last: false,
            barrier: Some((2, 1.3)),
        };
        let (torques, cost_att) = att.solve(&mut self.cascade.attitude, move |s, u, _| {
            let rates = [s[3], s[4], s[5]];
            let iw = [
                inertia[0] * rates[0],
                inertia[1] * rates[1],
                inertia[2] * rates[2],
            ];
            let gyro = [
                rates[1] * iw[2] - rates[2] * iw[1],
                rates[2] * iw[0] - rates[0] * iw[2],
                rates[0] * iw[1] - rates[1] * iw[0],
            ];
            [
                s[3],
                s[4],
                s[5],
                (u[0] - gyro[0]) / inertia[0],
                (u[1] - gyro[1]) / inertia[1],
                (u[2] - gyro[2]) / inertia[2],
            ]
        });

        // 4-5. Mixer with tilt compensation, then rate limit and clamp.
        let tilt = (x[3].cos() * x[4].cos()).max(0.5);
        let wrench = Wrench {
            thrust: thrust_cmd / tilt,
            torque: nalgebra::Vector3::new(torques[0], torques[1], torques[2]),
        };
        let u = mix(&wrench, p, &self.bounds);
        let u = rate_limit(&self.u_prev, &u, &self.bounds);

        self.last_setpoints = Some(CascadeSetpoints {
            thrust: thrust_cmd,
            phi_ref,
            theta_ref,
            tau_psi: torques[2],
        });
        Ok(StepOutput {
            u,
            cost: cost_alt + cost_pl + cost_att,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::allocate;
    use crate::test_util::Lcg;
    use approx::assert_relative_eq;

    fn make(mode: ControllerMode) -> FlightController {
        FlightController::new(
            mode,
            QuadParams::default(),
            WeightSet::default(),
            HorizonConfig::default(),
            InputBounds::default(),
            TimeOptConfig {
                t_o: 2.4,
                enabled: true,
            },
        )
        .unwrap()
    }

    #[test]
    fn mix_inverts_symmetric_thrust() {
        let p = QuadParams::default();
        let b = InputBounds::default();
        let h = 1.3;
        let w = Wrench {
            thrust: 4.0 * p.thrust_coeff * h,
            torque: nalgebra::Vector3::zeros(),
        };
        let u = mix(&w, &p, &b);
        for i in 0..4 {
            assert_relative_eq!(u[i], h, epsilon = 1e-12);
        }
    }

    #[test]
    fn mix_zero_wrench() {
        let u = mix(
            &Wrench {
                thrust: 0.0,
                torque: nalgebra::Vector3::zeros(),
            },
            &QuadParams::default(),
            &InputBounds::default(),
        );
        for i in 0..4 {
            assert_eq!(u[i], 0.0);
        }
    }

    #[test]
    fn mix_is_left_inverse_of_allocate() {
        let p = QuadParams::default();
        let b = InputBounds::default();
        let mut rng = Lcg(11);
        for _ in 0..100 {
            let u = Input4::from_array([
                rng.in_range(0.0, 5.0),
                rng.in_range(0.0, 5.0),
                rng.in_range(0.0, 5.0),
                rng.in_range(0.0, 5.0),
            ]);
            let w = allocate(&u, &p);
            let back = mix(&w, &p, &b);
            for i in 0..4 {
                assert!((back[i] - u[i]).abs() < 1e-10, "channel {i}");
            }
        }
    }

    #[test]
    fn rate_limit_cases() {
        let b = InputBounds::default();
        // Inside both boxes: unchanged.
        let u = rate_limit(&Input4::splat(2.0), &Input4::splat(2.5), &b);
        for i in 0..4 {
            assert_eq!(u[i], 2.5);
        }
        // Far command from rest clips at the rate bound.
        let u = rate_limit(&Input4::zeros(), &Input4::splat(5.0), &b);
        for i in 0..4 {
            assert_eq!(u[i], 1.0);
        }
    }

    #[test]
    fn rate_limit_idempotent() {
        let b = InputBounds::default();
        let mut rng = Lcg(3);
        for _ in 0..100 {
            let prev = Input4::splat(rng.in_range(0.0, 5.0));
            let cmd = Input4::from_array([
                rng.in_range(-2.0, 7.0),
                rng.in_range(-2.0, 7.0),
                rng.in_range(-2.0, 7.0),
                rng.in_range(-2.0, 7.0),
            ]);
            let once = rate_limit(&prev, &cmd, &b);
            let twice = rate_limit(&prev, &once, &b);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn every_mode_holds_hover() {
        // On a stationary achieved target, every mode returns the hover
        // input to within 1e-4 per channel.
        let p = QuadParams::default();
        let u_hover = p.hover_input();
        let mut target = State12::zeros();
        target[2] = 1.0;
        for mode in ControllerMode::all() {
            let mut ctl = make(mode);
            let out = ctl.step_to_point(&target, &target, 0.0).unwrap();
            for i in 0..4 {
                assert!(
                    (out.u[i] - u_hover[i]).abs() < 1e-4,
                    "{mode}: channel {i} = {} vs hover {}",
                    out.u[i],
                    u_hover[i]
                );
            }
        }
    }

    #[test]
    fn cascade_pure_vertical_symmetry() {
        // Target straight above: no tilt references, thrust above hover.
        let mut ctl = make(ControllerMode::CascadeNMPC);
        let x = State12::zeros();
        let mut target = State12::zeros();
        target[2] = 3.0;
        ctl.step_to_point(&x, &target, 0.0).unwrap();
        let sp = ctl.last_setpoints().unwrap();
        assert_eq!(sp.phi_ref, 0.0);
        assert_eq!(sp.theta_ref, 0.0);
        assert!(sp.thrust > ctl.params.hover_thrust());
    }

    #[test]
    fn cascade_tilt_guard_holds() {
        let mut ctl = make(ControllerMode::CascadeNMPC);
        let x = State12::zeros();
        let mut target = State12::zeros();
        target[0] = 50.0;
        target[1] = -50.0;
        ctl.step_to_point(&x, &target, 0.0).unwrap();
        let sp = ctl.last_setpoints().unwrap();
        assert!(sp.phi_ref.abs() <= TILT_GUARD + 1e-12);
        assert!(sp.theta_ref.abs() <= TILT_GUARD + 1e-12);
    }

    #[test]
    fn all_modes_emit_feasible_rate_limited_inputs() {
        let mut rng = Lcg(23);
        for mode in ControllerMode::all() {
            let mut ctl = make(mode);
            let b = ctl.bounds;
            let mut prev = ctl.previous_input();
            for step in 0..10 {
                let mut x = State12::zeros();
                for i in 0..3 {
                    x[i] = rng.in_range(-4.0, 4.0);
                    x[6 + i] = rng.in_range(-1.5, 1.5);
                }
                x[3] = rng.in_range(-0.2, 0.2);
                x[4] = rng.in_range(-0.2, 0.2);
                let mut target = State12::zeros();
                for i in 0..3 {
                    target[i] = rng.in_range(-4.0, 4.0);
                }
                let out = ctl.step_to_point(&x, &target, step as f64 * 0.05).unwrap();
                for i in 0..4 {
                    assert!(out.u[i] >= b.u_min[i] && out.u[i] <= b.u_max[i], "{mode}");
                    assert!((out.u[i] - prev[i]).abs() <= b.du_max[i] + 1e-12, "{mode}");
                }
                prev = out.u;
            }
        }
    }

    #[test]
    fn consecutive_outputs_respect_rate_bound() {
        // Large persistent error: outputs still move at most du_max per step.
        let mut ctl = make(ControllerMode::MonolithicNMPC);
        let b = ctl.bounds;
        let mut target = State12::zeros();
        target[2] = 30.0;
        let x = State12::zeros();
        let mut prev = ctl.previous_input();
        for step in 0..6 {
            let out = ctl.step_to_point(&x, &target, step as f64 * 0.05).unwrap();
            for i in 0..4 {
                assert!((out.u[i] - prev[i]).abs() <= b.du_max[i] + 1e-12);
            }
            prev = out.u;
        }
        // After enough steps the channels saturate at u_max.
        for i in 0..4 {
            assert_relative_eq!(prev[i], b.u_max[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite_state() {
        let mut ctl = make(ControllerMode::MonolithicNMPC);
        let mut x = State12::zeros();
        x[0] = f64::NAN;
        assert!(ctl.step_to_point(&x, &State12::zeros(), 0.0).is_err());
    }

    #[test]
    fn rejects_short_reference_window() {
        let mut ctl = make(ControllerMode::CascadeNMPC);
        let refs = vec![State12::zeros(); ctl.horizon.n]; // one short
        let err = ctl.step(&State12::zeros(), &refs, 0.0);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        // Extra entries are fine.
        let refs = vec![State12::zeros(); ctl.horizon.n + 5];
        assert!(ctl.step(&State12::zeros(), &refs, 0.0).is_ok());
    }
}
