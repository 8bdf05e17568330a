//! Cost components shared by every controller: stage error cost, input cost,
//! terminal cost, and the time-optimal term that turns the standard NMPC
//! objective into the improved one.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Input4, State12};
use crate::error::{Error, Result};

/// Diagonal weight matrices plus the time-decay constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSet {
    /// Stage state weight diagonal (12 entries).
    pub q: [f64; 12],
    /// Input weight diagonal (4 entries).
    pub r: [f64; 4],
    /// Terminal state weight diagonal (12 entries).
    pub p: [f64; 12],
    /// Time-optimal term weight diagonal (12 entries).
    pub qi: [f64; 12],
    /// Exponential decay constant [1/s].
    pub alpha: f64,
}

impl Default for WeightSet {
    fn default() -> Self {
        // Position, attitude, linear velocity and roll rate carry unit
        // weight; the trailing angular rates are free. The time-optimal
        // weight covers the whole state.
        let mut q = [1.0; 12];
        q[10] = 0.0;
        q[11] = 0.0;
        WeightSet {
            q,
            r: [0.1; 4],
            p: q,
            qi: [1.0; 12],
            alpha: 0.5,
        }
    }
}

impl WeightSet {
    /// Stage weights scaled by dt, for Riemann-sum approximations of the
    /// continuous-time objective. The terminal weight is left untouched.
    pub fn stage_scaled(&self, dt: f64) -> WeightSet {
        let mut w = self.clone();
        for v in w.q.iter_mut() {
            *v *= dt;
        }
        for v in w.r.iter_mut() {
            *v *= dt;
        }
        for v in w.qi.iter_mut() {
            *v *= dt;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.q.iter().enumerate() {
            if !(*v >= 0.0) {
                return Err(Error::InvalidConfig(format!("weights.q[{i}] must be >= 0")));
            }
        }
        for (i, v) in self.p.iter().enumerate() {
            if !(*v >= 0.0) {
                return Err(Error::InvalidConfig(format!("weights.p[{i}] must be >= 0")));
            }
        }
        for (i, v) in self.qi.iter().enumerate() {
            if !(*v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "weights.qi[{i}] must be >= 0"
                )));
            }
        }
        for (i, v) in self.r.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::InvalidConfig(format!("weights.r[{i}] must be > 0")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("weights.alpha must be > 0".into()));
        }
        Ok(())
    }
}

/// Target flight time for the time-optimal term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeOptConfig {
    /// Target optimal time [s].
    pub t_o: f64,
    /// Whether the time-optimal term is active.
    pub enabled: bool,
}

impl Default for TimeOptConfig {
    fn default() -> Self {
        TimeOptConfig {
            t_o: 2.4,
            enabled: false,
        }
    }
}

impl TimeOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.t_o > 0.0) {
            return Err(Error::InvalidConfig(
                "time_opt.t_o must be > 0 when enabled".into(),
            ));
        }
        Ok(())
    }
}

/// The four objective components and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub jx: f64,
    pub ju: f64,
    pub jp: f64,
    pub ji: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn sum(jx: f64, ju: f64, jp: f64, ji: f64) -> Self {
        CostBreakdown {
            jx,
            ju,
            jp,
            ji,
            total: jx + ju + jp + ji,
        }
    }
}

impl std::ops::Add for CostBreakdown {
    type Output = CostBreakdown;
    fn add(self, o: CostBreakdown) -> CostBreakdown {
        CostBreakdown::sum(
            self.jx + o.jx,
            self.ju + o.ju,
            self.jp + o.jp,
            self.ji + o.ji,
        )
    }
}

/// Diagonally weighted squared norm: sum_i w_i v_i^2.
pub fn weighted_sqnorm(v: &[f64], w_diag: &[f64]) -> Result<f64> {
    if v.len() != w_diag.len() {
        return Err(Error::DimensionMismatch {
            expected: w_diag.len(),
            got: v.len(),
        });
    }
    Ok(v.iter().zip(w_diag).map(|(vi, wi)| wi * vi * vi).sum())
}

/// Componentwise state error, no angle wrapping.
pub fn tracking_error(x: &State12, x_ref: &State12) -> State12 {
    State12(x.0 - x_ref.0)
}

/// The time-dependent weight |exp(-alpha (t - t_o)) - 1|.
///
/// Zero exactly at t = t_o, strictly decreasing before it and strictly
/// increasing after it.
pub fn time_opt_factor(alpha: f64, t: f64, t_o: f64) -> f64 {
    ((-alpha * (t - t_o)).exp() - 1.0).abs()
}

/// Time-optimal cost term: the Qi-weighted error energy over the horizon,
/// scaled by [`time_opt_factor`] at the current solve time. Returns zero
/// when the term is disabled.
pub fn time_optimal_term(
    errors: &[State12],
    w: &WeightSet,
    t: f64,
    cfg: &TimeOptConfig,
) -> Result<f64> {
    if !cfg.enabled {
        return Ok(0.0);
    }
    let mut energy = 0.0;
    for e in errors {
        energy += weighted_sqnorm(e.0.as_slice(), &w.qi)?;
    }
    Ok(energy * time_opt_factor(w.alpha, t, cfg.t_o))
}

/// Full objective over a predicted trajectory.
///
/// `states` and `refs` both hold stages 0..=N; the stage cost runs over
/// k = 0..N-1, the terminal cost applies at stage N, and the input cost
/// covers the free moves handed in (the blocked repeats are not charged).
/// The time-optimal term uses the same stage errors as the state cost.
pub fn total_cost(
    states: &[State12],
    inputs: &[Input4],
    refs: &[State12],
    w: &WeightSet,
    t: f64,
    cfg: &TimeOptConfig,
) -> Result<CostBreakdown> {
    if states.len() != refs.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            got: refs.len(),
        });
    }
    if states.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let n = states.len() - 1;

    let errors: Vec<State12> = states
        .iter()
        .zip(refs)
        .map(|(x, r)| tracking_error(x, r))
        .collect();

    let mut jx = 0.0;
    for e in &errors[..n] {
        jx += weighted_sqnorm(e.0.as_slice(), &w.q)?;
    }
    let mut ju = 0.0;
    for u in inputs {
        ju += weighted_sqnorm(u.0.as_slice(), &w.r)?;
    }
    let jp = weighted_sqnorm(errors[n].0.as_slice(), &w.p)?;
    let ji = time_optimal_term(&errors[..n], w, t, cfg)?;
    Ok(CostBreakdown::sum(jx, ju, jp, ji))
}
