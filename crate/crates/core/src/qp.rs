//! Box-constrained convex quadratic programming via projected gradient
//! descent with Barzilai-Borwein steps. Boxes are the only constraint class
//! the condensed MPC needs, and exact clamping keeps every iterate feasible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Hard cap on problem size; the condensed MPC never comes close.
pub const MAX_DIMENSION: usize = 128;

const SYMMETRY_TOL: f64 = 1e-10;

/// minimize 1/2 x^T H x + g^T x  subject to  lb <= x <= ub.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl BoxQp {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: h.nrows(),
            });
        }
        if lb.len() != n || ub.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lb.len(),
            });
        }
        if n > MAX_DIMENSION {
            return Err(Error::BadProblem(format!(
                "dimension {n} exceeds cap {MAX_DIMENSION}"
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (h[(i, j)] - h[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::BadProblem(format!(
                        "Hessian asymmetric at ({i},{j}): {} vs {}",
                        h[(i, j)],
                        h[(j, i)]
                    )));
                }
            }
            if lb[i] > ub[i] {
                return Err(Error::BadProblem(format!(
                    "lb[{i}] = {} exceeds ub[{i}] = {}",
                    lb[i], ub[i]
                )));
            }
        }
        Ok(BoxQp { h, g, lb, ub })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lb[i], self.ub[i]);
        }
    }
}

/// 1/2 x^T H x + g^T x.
pub fn qp_objective(p: &BoxQp, x: &DVector<f64>) -> Result<f64> {
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        });
    }
    Ok(0.5 * x.dot(&(&p.h * x)) + p.g.dot(x))
}

/// Termination status of [`solve_box_qp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged {
        iterations: usize,
    },
    /// The tolerance was not met; the returned point is the best feasible
    /// iterate seen.
    MaxIterations,
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5_000;

/// Projected-gradient descent with Barzilai-Borwein steps.
///
/// The returned point is always inside the box. When BB produces a
/// non-finite or non-positive step, the fallback is 1/L with L estimated
/// from the Hessian row sums.
pub fn solve_box_qp(p: &BoxQp, tol: f64, max_iter: usize) -> Result<(DVector<f64>, SolveStatus)> {
    let n = p.dim();
    // Conservative Lipschitz estimate: max absolute row sum bounds ||H||_2.
    let lip = (0..n)
        .map(|i| p.h.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let fallback_step = 1.0 / lip;

    let mut x = DVector::zeros(n);
    p.project(&mut x);
    let mut grad = &p.h * &x + &p.g;

    let mut best_x = x.clone();
    let mut best_obj = qp_objective(p, &x)?;

    let mut prev_x: Option<DVector<f64>> = None;
    let mut prev_grad: Option<DVector<f64>> = None;

    for iter in 0..max_iter {
        // Projected-gradient optimality measure.
        let mut probe = &x - &grad;
        p.project(&mut probe);
        let pg_norm = (&probe - &x).norm();
        if pg_norm < tol {
            return Ok((best_x, SolveStatus::Converged { iterations: iter }));
        }

        let step = match (&prev_x, &prev_grad) {
            (Some(px), Some(pg)) => {
                let s = &x - px;
                let y = &grad - pg;
                let sy = s.dot(&y);
                let bb = s.dot(&s) / sy;
                if bb.is_finite() && bb > 0.0 {
                    bb
                } else {
                    fallback_step
                }
            }
            _ => fallback_step,
        };

        let mut next = &x - &grad * step;
        p.project(&mut next);

        prev_x = Some(x.clone());
        prev_grad = Some(grad.clone());
        x = next;
        grad = &p.h * &x + &p.g;

        let obj = qp_objective(p, &x)?;
        if obj < best_obj {
            best_obj = obj;
            best_x = x.clone();
        }
    }

    Ok((best_x, SolveStatus::MaxIterations))
}

/// Convenience wrapper with the stock tolerance and iteration cap.
pub fn solve_box_qp_default(p: &BoxQp) -> Result<(DVector<f64>, SolveStatus)> {
    solve_box_qp(p, DEFAULT_TOL, DEFAULT_MAX_ITER)
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn unit_box(n: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::zeros(n), DVector::repeat(n, 1.0))
    }

    #[test]
    fn interior_minimum() {
        // H = I, g = -c with c inside the box: minimizer is c.
        let c = DVector::from_row_slice(&[0.3, 0.6, 0.2]);
        let (lb, ub) = unit_box(3);
        let p = BoxQp::new(DMatrix::identity(3, 3), -c.clone(), lb, ub).unwrap();
        let (x, status) = solve_box_qp_default(&p).unwrap();
        assert!(matches!(status, SolveStatus::Converged { .. }));
        assert_relative_eq!((x - c).norm(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn active_upper_bound() {
        // n = 1, H = 1, g = -10 on [0, 5]: unconstrained minimum 10 clamps to 5.
        let p = BoxQp::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -10.0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 5.0),
        )
        .unwrap();
        let (x, _) = solve_box_qp_default(&p).unwrap();
        assert_relative_eq!(x[0], 5.0, epsilon = 1e-9);
    }

    #[test]
    fn iteration_cap_reports_max_iterations() {
        use crate::test_util::{random_psd_qp, Lcg};
        let mut rng = Lcg(404);
        let p = random_psd_qp(&mut rng, 4);
        let (x, status) = solve_box_qp(&p, 1e-14, 1).unwrap();
        assert_eq!(status, SolveStatus::MaxIterations);
        for i in 0..4 {
            assert!(x[i] >= p.lb[i] && x[i] <= p.ub[i]);
        }
    }

    #[test]
    fn rejects_oversized_problem() {
        let n = MAX_DIMENSION + 1;
        let err = BoxQp::new(
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DVector::zeros(n),
            DVector::repeat(n, 1.0),
        );
        assert!(matches!(err, Err(Error::BadProblem(_))));
    }

    #[test]
    fn rejects_inverted_bounds() {
        let err = BoxQp::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_row_slice(&[0.0, 1.0]),
            DVector::from_row_slice(&[1.0, 0.5]),
        );
        assert!(matches!(err, Err(Error::BadProblem(_))));
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        let mut h = DMatrix::identity(2, 2);
        h[(0, 1)] = 0.5;
        let (lb, ub) = unit_box(2);
        assert!(BoxQp::new(h, DVector::zeros(2), lb, ub).is_err());
    }

    #[test]
    fn objective_values() {
        let (lb, ub) = unit_box(2);
        let p = BoxQp::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), lb, ub).unwrap();
        assert_eq!(qp_objective(&p, &DVector::zeros(2)).unwrap(), 0.0);
        assert_eq!(qp_objective(&p, &DVector::repeat(2, 1.0)).unwrap(), 2.0);
    }

    use crate::test_util::{random_psd_qp, Lcg};

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = Lcg(7);
        let p = random_psd_qp(&mut rng, 4);
        let x = DVector::from_fn(4, |_, _| rng.in_range(0.0, 1.0));
        let grad = &p.h * &x + &p.g;
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (qp_objective(&p, &xp).unwrap() - qp_objective(&p, &xm).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd, grad[i], max_relative = 1e-6);
        }
    }

    #[test]
    fn grid_oracle_agreement_small() {
        // Random 3-dim PSD instances against the dense grid oracle.
        let mut rng = Lcg(42);
        for _ in 0..10 {
            let p = random_psd_qp(&mut rng, 3);
            let (x, _) = solve_box_qp_default(&p).unwrap();
            let f = qp_objective(&p, &x).unwrap();
            let (_, f_grid) = grid_oracle::grid_search(&p, 21, 4);
            assert!(
                (f - f_grid).abs() <= 1e-6 * (1.0 + f_grid.abs()),
                "solver {f} vs grid {f_grid}"
            );
        }
    }

    #[test]
    fn best_so_far_objective_monotone() {
        // Re-run the solver with increasing iteration caps; the best-so-far
        // objective can only improve.
        let mut rng = Lcg(99);
        let p = random_psd_qp(&mut rng, 4);
        let mut prev = f64::INFINITY;
        for cap in [1, 2, 5, 10, 50, 200] {
            let (x, _) = solve_box_qp(&p, 0.0, cap).unwrap();
            let obj = qp_objective(&p, &x).unwrap();
            assert!(obj <= prev + 1e-15, "cap {cap}: {obj} > {prev}");
            prev = obj;
        }
    }

    proptest! {
        #[test]
        fn returned_point_always_feasible(seed in 0u64..1000) {
            let mut rng = Lcg(seed);
            let n = 1 + (seed as usize % 4);
            let p = random_psd_qp(&mut rng, n);
            let (x, _) = solve_box_qp(&p, 1e-8, 50).unwrap();
            for i in 0..n {
                prop_assert!(x[i] >= p.lb[i] && x[i] <= p.ub[i]);
            }
        }

        #[test]
        fn scaling_invariance(seed in 0u64..200, scale in 0.1f64..50.0) {
            let mut rng = Lcg(seed.wrapping_mul(31).wrapping_add(5));
            let p = random_psd_qp(&mut rng, 3);
            let scaled = BoxQp::new(
                &p.h * scale,
                &p.g * scale,
                p.lb.clone(),
                p.ub.clone(),
            ).unwrap();
            let (x1, _) = solve_box_qp_default(&p).unwrap();
            let (x2, _) = solve_box_qp_default(&scaled).unwrap();
            prop_assert!((x1 - x2).norm() < 1e-5);
        }
    }
}
