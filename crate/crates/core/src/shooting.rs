//! Projected-gradient minimizer with finite-difference gradients and a
//! backtracking line search. Shared by the full-state nonlinear MPC and the
//! cascade sub-controllers; the decision space is small (a handful of input
//! moves), so gradient descent converges in a few iterations.

use nalgebra::DVector;

pub const FD_GRADIENT_STEP: f64 = 1e-5;
pub const PG_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShootStatus {
    Converged,
    MaxIterations,
    /// Every evaluated candidate was rejected (e.g. infinite objective from
    /// a singular rollout); the warm start is returned unchanged.
    Stalled,
}

#[derive(Debug, Clone, Copy)]
pub struct ShootResult {
    pub status: ShootStatus,
    pub iterations: usize,
    pub objective: f64,
}

fn project(x: &mut DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    x: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * step);
    }
    g
}

/// Minimize `f` over the box [lb, ub] starting from a feasible `x0`.
///
/// Candidates that evaluate to a non-finite objective are rejected by the
/// line search, so the returned point always carries a finite objective no
/// worse than the start's (provided the start itself is finite).
pub fn minimize_projected<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    x0: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> (DVector<f64>, ShootResult) {
    let mut x = x0.clone();
    project(&mut x, lb, ub);
    let mut obj = f(&x);
    if !obj.is_finite() {
        return (
            x0.clone(),
            ShootResult {
                status: ShootStatus::Stalled,
                iterations: 0,
                objective: f64::INFINITY,
            },
        );
    }

    let mut iterations = 0;
    // The accepted step of one iteration seeds the next line search, so the
    // search does not have to halve down from 1.0 on stiff objectives.
    let mut alpha_seed = 1.0f64;
    for _ in 0..MAX_ITERATIONS {
        let grad = fd_gradient(f, &x, FD_GRADIENT_STEP);

        let mut probe = &x - &grad;
        project(&mut probe, lb, ub);
        if (&probe - &x).norm() < PG_TOLERANCE {
            return (
                x,
                ShootResult {
                    status: ShootStatus::Converged,
                    iterations,
                    objective: obj,
                },
            );
        }

        let mut alpha = alpha_seed;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = &x - &grad * alpha;
            project(&mut cand, lb, ub);
            let cand_obj = f(&cand);
            if cand_obj.is_finite() && cand_obj < obj {
                x = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No descent along the projected gradient at line-search
            // resolution; treat as converged at this point.
            return (
                x,
                ShootResult {
                    status: ShootStatus::Converged,
                    iterations,
                    objective: obj,
                },
            );
        }
        alpha_seed = (alpha * 2.0).clamp(1e-12, 1e9);
    }

    (
        x,
        ShootResult {
            status: ShootStatus::MaxIterations,
            iterations,
            objective: obj,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_bowl_interior() {
        let f = |x: &DVector<f64>| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.1).powi(2);
        let lb = DVector::from_row_slice(&[-1.0, -1.0]);
        let ub = DVector::from_row_slice(&[1.0, 1.0]);
        let (x, res) = minimize_projected(&f, &DVector::zeros(2), &lb, &ub);
        assert_eq!(res.status, ShootStatus::Converged);
        assert_relative_eq!(x[0], 0.3, epsilon = 1e-5);
        assert_relative_eq!(x[1], -0.1, epsilon = 1e-5);
    }

    #[test]
    fn active_bound() {
        let f = |x: &DVector<f64>| (x[0] - 5.0).powi(2);
        let lb = DVector::from_row_slice(&[0.0]);
        let ub = DVector::from_row_slice(&[1.0]);
        let (x, _) = minimize_projected(&f, &DVector::zeros(1), &lb, &ub);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn infinite_start_returns_stalled() {
        let f = |_: &DVector<f64>| f64::INFINITY;
        let lb = DVector::from_row_slice(&[0.0]);
        let ub = DVector::from_row_slice(&[1.0]);
        let x0 = DVector::from_row_slice(&[0.5]);
        let (x, res) = minimize_projected(&f, &x0, &lb, &ub);
        assert_eq!(res.status, ShootStatus::Stalled);
        assert_eq!(x[0], 0.5);
    }

    #[test]
    fn result_never_worse_than_start() {
        use crate::test_util::Lcg;
        let mut rng = Lcg(5);
        for _ in 0..50 {
            let a = rng.in_range(0.2, 3.0);
            let b = rng.in_range(-2.0, 2.0);
            let f = move |x: &DVector<f64>| a * (x[0] - b).powi(2) + (x[0] * x[1]).powi(2);
            let lb = DVector::from_row_slice(&[-3.0, -3.0]);
            let ub = DVector::from_row_slice(&[3.0, 3.0]);
            let x0 = DVector::from_row_slice(&[rng.in_range(-3.0, 3.0), rng.in_range(-3.0, 3.0)]);
            let start_obj = f(&x0);
            let (_, res) = minimize_projected(&f, &x0, &lb, &ub);
            assert!(res.objective <= start_obj);
        }
    }
}
