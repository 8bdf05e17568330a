//! Standard linear MPC: condense the stacked prediction over the horizon
//! into a box-constrained QP on the input moves and apply the first one.
//!
//! The formulation works in deviations from the model's operating point
//! (delta-x, delta-u), so the input cost penalizes excursions from trim and
//! hovering on an achieved reference is an exact fixed point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::WeightSet;
use crate::dynamics::{Input4, State12};
use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::qp::{solve_box_qp, BoxQp, SolveStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Prediction and control horizon lengths plus the controller sample time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// Prediction steps N.
    pub n: usize,
    /// Control steps N_u; moves beyond N_u-1 are held (move-blocking).
    pub n_u: usize,
    /// Controller sample time [s].
    pub dt: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig {
            n: 18,
            n_u: 1,
            dt: 0.05,
        }
    }
}

impl HorizonConfig {
    /// Continuous horizon length T = N dt.
    pub fn horizon_seconds(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_u < 1 || self.n_u > self.n {
            return Err(Error::InvalidConfig(format!(
                "horizon.n_u must satisfy 1 <= n_u <= n, got n_u = {}, n = {}",
                self.n_u, self.n
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("horizon.dt must be > 0".into()));
        }
        Ok(())
    }
}

/// Magnitude and per-step rate bounds on the input channels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBounds {
    pub u_min: [f64; 4],
    pub u_max: [f64; 4],
    /// Symmetric rate bound per controller step.
    pub du_max: [f64; 4],
}

impl Default for InputBounds {
    fn default() -> Self {
        InputBounds {
            u_min: [0.0; 4],
            u_max: [5.0; 4],
            du_max: [1.0; 4],
        }
    }
}

impl InputBounds {
    pub fn clamp_magnitude(&self, u: &Input4) -> Input4 {
        let mut out = *u;
        for i in 0..4 {
            out[i] = out[i].clamp(self.u_min[i], self.u_max[i]);
        }
        out
    }

    pub fn contains(&self, u: &Input4) -> bool {
        (0..4).all(|i| u[i] >= self.u_min[i] && u[i] <= self.u_max[i])
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if self.u_min[i] > self.u_max[i] {
                return Err(Error::InvalidConfig(format!(
                    "bounds.u_min[{i}] = {} exceeds bounds.u_max[{i}] = {}",
                    self.u_min[i], self.u_max[i]
                )));
            }
            if !(self.du_max[i] >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "bounds.du_max[{i}] must be >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome flags of one controller step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepStatus {
    pub solve: SolveStatus,
    /// Set when the magnitude/rate intersection was empty and the bounds
    /// fell back to the magnitude box alone.
    pub box_clamped: bool,
}

/// Dimension-generic condensed QP assembly over deviations.
///
/// `w_stage[k]` is the constant error offset (x_op - r_{k+1}) added to the
/// predicted deviation at stage k+1; `q`/`p`/`r` are weight diagonals. The
/// terminal weight is folded onto the last stage. Decision blocks get the
/// per-block bounds handed in.
#[allow(clippy::too_many_arguments)]
pub(crate) fn condense(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    q: &DVector<f64>,
    p_term: &DVector<f64>,
    r: &DVector<f64>,
    n: usize,
    n_u: usize,
    dx0: &DVector<f64>,
    w_stage: &[DVector<f64>],
    lb_blocks: &[DVector<f64>],
    ub_blocks: &[DVector<f64>],
) -> Result<BoxQp> {
    let nx = ad.nrows();
    let m = bd.ncols();
    if w_stage.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w_stage.len(),
        });
    }
    if lb_blocks.len() != n_u || ub_blocks.len() != n_u {
        return Err(Error::DimensionMismatch {
            expected: n_u,
            got: lb_blocks.len(),
        });
    }

    // Powers of Ad up to N.
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(DMatrix::identity(nx, nx));
    for k in 0..n {
        let next = &powers[k] * ad;
        powers.push(next);
    }

    // Prediction matrices over stages 1..=N:
    //   dx_k = Ad^k dx0 + sum_{i<k} Ad^{k-1-i} Bd du_{min(i, n_u-1)}.
    let mut f_free = DVector::zeros(n * nx);
    let mut g_map = DMatrix::zeros(n * nx, n_u * m);
    for k in 1..=n {
        let row = (k - 1) * nx;
        f_free.rows_mut(row, nx).copy_from(&(&powers[k] * dx0));
        for i in 0..k {
            let block = &powers[k - 1 - i] * bd;
            let j = i.min(n_u - 1);
            let mut dst = g_map.view_mut((row, j * m), (nx, m));
            dst += block;
        }
    }

    // Stage weights with the terminal weight folded onto stage N.
    let mut q_bar = DVector::zeros(n * nx);
    for k in 1..=n {
        for i in 0..nx {
            let mut wv = q[i];
            if k == n {
                wv += p_term[i];
            }
            q_bar[(k - 1) * nx + i] = wv;
        }
    }

    // Constant error part: F dx0 + w.
    let mut e_const = f_free;
    for k in 0..n {
        let mut rows = e_const.rows_mut(k * nx, nx);
        rows += &w_stage[k];
    }

    // H = G' Qbar G + Rbar, g = G' Qbar e_const (Qbar diagonal).
    let gq = DMatrix::from_fn(n_u * m, n * nx, |i, j| g_map[(j, i)] * q_bar[j]);
    let mut h = &gq * &g_map;
    for j in 0..n_u {
        for i in 0..m {
            h[(j * m + i, j * m + i)] += r[i];
        }
    }
    // Symmetrize away roundoff from the product.
    let ht = h.transpose();
    h = (&h + &ht) * 0.5;
    let g_vec = &gq * &e_const;

    let mut lb = DVector::zeros(n_u * m);
    let mut ub = DVector::zeros(n_u * m);
    for j in 0..n_u {
        lb.rows_mut(j * m, m).copy_from(&lb_blocks[j]);
        ub.rows_mut(j * m, m).copy_from(&ub_blocks[j]);
    }

    BoxQp::new(h, g_vec, lb, ub)
}

/// Deviation bounds per decision block: magnitude everywhere, rate on the
/// first move. Returns the blocks plus a flag for an empty intersection
/// (which falls back to the magnitude box).
fn deviation_bounds(
    b: &InputBounds,
    u_op: &Input4,
    u_prev: &Input4,
    n_u: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, bool) {
    let mut lb_blocks = Vec::with_capacity(n_u);
    let mut ub_blocks = Vec::with_capacity(n_u);
    let mut clamped = false;
    for j in 0..n_u {
        let mut lo = DVector::zeros(4);
        let mut hi = DVector::zeros(4);
        for i in 0..4 {
            let mut l = b.u_min[i];
            let mut h = b.u_max[i];
            if j == 0 {
                let rl = u_prev[i] - b.du_max[i];
                let rh = u_prev[i] + b.du_max[i];
                if rl.max(l) > rh.min(h) {
                    clamped = true;
                } else {
                    l = l.max(rl);
                    h = h.min(rh);
                }
            }
            lo[i] = l - u_op[i];
            hi[i] = h - u_op[i];
        }
        lb_blocks.push(lo);
        ub_blocks.push(hi);
    }
    (lb_blocks, ub_blocks, clamped)
}

/// Build the condensed box QP for one solve. `refs` holds stages 0..=N;
/// stage 0 is not part of the decision problem.
pub fn build_condensed(
    model: &LinearModel,
    w: &WeightSet,
    hc: &HorizonConfig,
    x0: &State12,
    refs: &[State12],
    u_prev: &Input4,
    b: &InputBounds,
) -> Result<(BoxQp, bool)> {
    hc.validate()?;
    if refs.len() != hc.n + 1 {
        return Err(Error::DimensionMismatch {
            expected: hc.n + 1,
            got: refs.len(),
        });
    }

    let dx0 = DVector::from_iterator(12, (x0.0 - model.x_op.0).iter().copied());
    let w_stage: Vec<DVector<f64>> = refs[1..]
        .iter()
        .map(|r| DVector::from_iterator(12, (model.x_op.0 - r.0).iter().copied()))
        .collect();
    let (lb_blocks, ub_blocks, clamped) = deviation_bounds(b, &model.u_op, u_prev, hc.n_u);

    let qp = condense(
        &model.ad,
        &model.bd,
        &DVector::from_row_slice(&w.q),
        &DVector::from_row_slice(&w.p),
        &DVector::from_row_slice(&w.r),
        hc.n,
        hc.n_u,
        &dx0,
        &w_stage,
        &lb_blocks,
        &ub_blocks,
    )?;
    Ok((qp, clamped))
}

/// One linear MPC step: condense, solve, return the first input move.
pub fn lmpc_step(
    x: &State12,
    refs: &[State12],
    u_prev: &Input4,
    model: &LinearModel,
    w: &WeightSet,
    hc: &HorizonConfig,
    b: &InputBounds,
) -> Result<(Input4, StepStatus)> {
    let (qp, box_clamped) = build_condensed(model, w, hc, x, refs, u_prev, b)?;
    let (v, solve) = solve_box_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let mut u = model.u_op;
    for i in 0..4 {
        u[i] += v[i];
    }
    Ok((u, StepStatus { solve, box_clamped }))
}
