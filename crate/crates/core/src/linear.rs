//! Discrete linear model of the plant around an operating point, and the
//! LQR baseline controller derived from it.

use nalgebra::DMatrix;

use crate::dynamics::{derivative, ExternalForce, Input4, QuadParams, State12};
use crate::error::{Error, Result};

/// Central finite-difference step for the Jacobians.
pub const FD_STEP: f64 = 1e-6;

/// Linearized, discretized plant model about an operating point.
#[derive(Debug, Clone)]
pub struct LinearModel {
    /// Continuous state Jacobian, 12x12.
    pub a: DMatrix<f64>,
    /// Continuous input Jacobian, 12x4.
    pub b: DMatrix<f64>,
    /// Discrete transition, 12x12.
    pub ad: DMatrix<f64>,
    /// Discrete input matrix, 12x4.
    pub bd: DMatrix<f64>,
    /// Discrete disturbance gain, 12x3.
    pub vd: DMatrix<f64>,
    /// Sample time [s].
    pub dt: f64,
    /// Operating state of the linearization.
    pub x_op: State12,
    /// Operating input of the linearization.
    pub u_op: Input4,
}

impl LinearModel {
    /// Linearize and discretize the plant about (x0, u0).
    pub fn at_operating_point(x0: &State12, u0: &Input4, p: &QuadParams, dt: f64) -> Result<Self> {
        let (a, b) = linearize(x0, u0, p)?;
        // f_ext enters the acceleration rows as I/m.
        let mut vd_cont = DMatrix::zeros(12, 3);
        for i in 0..3 {
            vd_cont[(6 + i, i)] = 1.0 / p.mass;
        }
        let (ad, bd, vd) = discretize(&a, &b, &vd_cont, dt)?;
        Ok(LinearModel {
            a,
            b,
            ad,
            bd,
            vd,
            dt,
            x_op: *x0,
            u_op: *u0,
        })
    }

    /// Hover-point model, the operating point every stock controller uses.
    pub fn hover(p: &QuadParams, dt: f64) -> Result<Self> {
        Self::at_operating_point(&State12::zeros(), &p.hover_input(), p, dt)
    }
}

/// Central finite-difference Jacobians (A, B) of the state derivative.
///
/// The kinematic rows (position and angle rates) are exact passthroughs of
/// the velocity states, so those rows are stamped with exact identity
/// blocks rather than differenced.
pub fn linearize(
    x0: &State12,
    u0: &Input4,
    p: &QuadParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let f_ext = ExternalForce::default();
    // Probe once so a singular operating point reports the right error.
    derivative(x0, u0, p, &f_ext)?;

    let mut a = DMatrix::zeros(12, 12);
    for j in 0..12 {
        let mut xp = *x0;
        let mut xm = *x0;
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        let fp = derivative(&xp, u0, p, &f_ext)?;
        let fm = derivative(&xm, u0, p, &f_ext)?;
        for i in 0..12 {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }

    let mut b = DMatrix::zeros(12, 4);
    for j in 0..4 {
        let mut up = *u0;
        let mut um = *u0;
        up[j] += FD_STEP;
        um[j] -= FD_STEP;
        let fp = derivative(x0, &up, p, &f_ext)?;
        let fm = derivative(x0, &um, p, &f_ext)?;
        for i in 0..12 {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
    }

    // Exact kinematics: d(xi)/dt = xi_dot and d(eta)/dt = eta_dot.
    for i in 0..6 {
        for j in 0..12 {
            a[(i, j)] = 0.0;
        }
        a[(i, i + 6)] = 1.0;
        for j in 0..4 {
            b[(i, j)] = 0.0;
        }
    }

    Ok((a, b))
}

/// Series discretization up to fourth order:
/// Ad = I + A dt + A^2 dt^2/2 + A^3 dt^3/6 + A^4 dt^4/24,
/// Bd = (I dt + A dt^2/2 + A^2 dt^3/6 + A^3 dt^4/24) B, same map for Vd.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    vd_cont: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || vd_cont.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::BadProblem(format!("dt must be > 0, got {dt}")));
    }

    let eye = DMatrix::identity(n, n);
    let a1 = a * dt;
    let a2 = &a1 * &a1;
    let a3 = &a2 * &a1;
    let a4 = &a3 * &a1;
    let ad = &eye + &a1 + &a2 / 2.0 + &a3 / 6.0 + &a4 / 24.0;
    // Integral of the series over one sample, then applied to B and Vd.
    let int = (&eye + &a1 / 2.0 + &a2 / 6.0 + &a3 / 24.0) * dt;
    let bd = &int * b;
    let vd = &int * vd_cont;
    Ok((ad, bd, vd))
}

/// State-feedback gain from the discrete Riccati recursion, plus the
/// converged cost matrix and the trim input the law is applied around:
/// u = u0 - K (x - x_ref).
#[derive(Debug, Clone)]
pub struct LqrGain {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub u0: Input4,
}

pub const RICCATI_TOL: f64 = 1e-9;
pub const RICCATI_MAX_ITER: usize = 10_000;
const RICCATI_RESIDUAL_CAP: f64 = 1e-6;

/// Iterate the discrete-time Riccati recursion to a fixed point.
pub fn lqr_gain(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u0: Input4,
) -> Result<LqrGain> {
    let n = ad.nrows();
    let m = bd.ncols();
    if ad.ncols() != n || bd.nrows() != n || q.nrows() != n || r.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ad.ncols(),
        });
    }

    let at = ad.transpose();
    let bt = bd.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for iter in 0..RICCATI_MAX_ITER {
        let btp = &bt * &p;
        let gram = r + &btp * bd;
        let gain = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::BadProblem("singular R + B'PB in Riccati step".into()))?
            * &btp
            * ad;
        let p_next = q + &at * &p * ad - &at * &p * bd * &gain;
        residual = (&p_next - &p).amax();
        p = p_next;
        if residual < RICCATI_TOL {
            break;
        }
        if iter == RICCATI_MAX_ITER - 1 && residual >= RICCATI_RESIDUAL_CAP {
            return Err(Error::NonConvergence {
                residual,
                iterations: RICCATI_MAX_ITER,
            });
        }
    }
    let _ = residual;

    let btp = &bt * &p;
    let gram = r + &btp * bd;
    let k = gram
        .try_inverse()
        .ok_or_else(|| Error::BadProblem("singular R + B'PB at gain extraction".into()))?
        * &btp
        * ad;
    Ok(LqrGain { k, p, u0 })
}

/// Largest eigenvalue magnitude; used to check closed-loop stability.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}
