//! Deterministic helpers shared by unit tests. No RNG is used anywhere in
//! the library itself; tests draw reproducible samples from a fixed-seed
//! linear congruential generator.

use nalgebra::{DMatrix, DVector};

use crate::qp::BoxQp;

pub(crate) struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        // Numerical Recipes constants; top 53 bits give a uniform in [0, 1).
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Strongly convex random instance on the unit box.
pub(crate) fn random_psd_qp(rng: &mut Lcg, n: usize) -> BoxQp {
    let m = DMatrix::from_fn(n, n, |_, _| rng.in_range(-1.0, 1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * rng.in_range(0.05, 1.0);
    let g = DVector::from_fn(n, |_, _| rng.in_range(-2.0, 2.0));
    BoxQp::new(h, g, DVector::zeros(n), DVector::repeat(n, 1.0)).unwrap()
}
