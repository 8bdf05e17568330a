//! Continuous-time quadrotor rigid-body model and fixed-step RK4 integrator.
//!
//! The state carries position, ZYX Euler angles and their time derivatives;
//! the input is the vector of four (normalized) squared rotor speeds. The
//! same model serves as the ground-truth plant for closed-loop runs and as
//! the dynamics constraint inside the nonlinear MPC.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin kept from the pitch singularity at |theta| = pi/2.
pub const SINGULARITY_MARGIN: f64 = 1e-6;

/// Full 12-entry quadrotor state in the fixed order
/// (x, y, z, phi, theta, psi, vx, vy, vz, phi_dot, theta_dot, psi_dot).
///
/// Euler angles are stored unwrapped so error arithmetic stays linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State12(pub SVector<f64, 12>);

/// Time derivative of a [`State12`], same ordering.
pub type StateRate = SVector<f64, 12>;

impl State12 {
    pub fn zeros() -> Self {
        State12(SVector::zeros())
    }

    pub fn from_array(a: [f64; 12]) -> Self {
        State12(SVector::from_row_slice(&a))
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn euler(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.0[6], self.0[7], self.0[8])
    }

    pub fn euler_rates(&self) -> Vector3<f64> {
        Vector3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for State12 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for State12 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Four control channels, one normalized squared rotor speed per motor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Input4(pub SVector<f64, 4>);

impl Input4 {
    pub fn zeros() -> Self {
        Input4(SVector::zeros())
    }

    pub fn splat(v: f64) -> Self {
        Input4(SVector::repeat(v))
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Input4(SVector::from_row_slice(&a))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Input4 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Input4 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Physical constants of the plant. All configurable; the defaults describe
/// a small quadrotor with hover sitting mid-range of the control interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    /// Mass [kg].
    pub mass: f64,
    /// Diagonal inertia (Ixx, Iyy, Izz) [kg m^2].
    pub inertia: [f64; 3],
    /// Arm length from center to rotor [m].
    pub arm_length: f64,
    /// Thrust per input unit [N].
    pub thrust_coeff: f64,
    /// Yaw drag-torque per input unit [N m].
    pub drag_torque_coeff: f64,
    /// Gravity [m/s^2].
    pub gravity: f64,
    /// Linear drag per axis [N s/m].
    pub linear_drag: [f64; 3],
}

impl Default for QuadParams {
    fn default() -> Self {
        let mass = 0.468;
        let gravity = 9.81;
        QuadParams {
            mass,
            inertia: [4.856e-3, 4.856e-3, 8.801e-3],
            arm_length: 0.225,
            // Chosen so the hover input sits at 2.5, mid-range of [0, 5].
            thrust_coeff: mass * gravity / (4.0 * 2.5),
            drag_torque_coeff: 0.01,
            gravity,
            linear_drag: [0.01, 0.01, 0.01],
        }
    }
}

impl QuadParams {
    /// Per-channel input at which total thrust balances weight.
    pub fn hover_input(&self) -> Input4 {
        Input4::splat(self.mass * self.gravity / (4.0 * self.thrust_coeff))
    }

    /// Thrust needed to balance weight [N].
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("quad.mass", self.mass),
            ("quad.inertia[0]", self.inertia[0]),
            ("quad.inertia[1]", self.inertia[1]),
            ("quad.inertia[2]", self.inertia[2]),
            ("quad.arm_length", self.arm_length),
            ("quad.thrust_coeff", self.thrust_coeff),
            ("quad.drag_torque_coeff", self.drag_torque_coeff),
            ("quad.gravity", self.gravity),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{key} must be > 0, got {v}")));
            }
        }
        for (i, d) in self.linear_drag.iter().enumerate() {
            if !(*d >= 0.0) || !d.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "quad.linear_drag[{i}] must be >= 0, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Total thrust along body z plus the three body torques.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    /// Total thrust [N].
    pub thrust: f64,
    /// Roll, pitch, yaw torques [N m].
    pub torque: Vector3<f64>,
}

/// World-frame disturbance force [N]. Carried through the model; zero in
/// every stock scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalForce(pub Vector3<f64>);

impl Default for ExternalForce {
    fn default() -> Self {
        ExternalForce(Vector3::zeros())
    }
}

/// Map rotor commands to total thrust and torques (cross configuration).
///
/// T    = k (u1 + u2 + u3 + u4)
/// tau_phi   = l k (u4 - u2)
/// tau_theta = l k (u3 - u1)
/// tau_psi   = b (u1 - u2 + u3 - u4)
pub fn allocate(u: &Input4, p: &QuadParams) -> Wrench {
    let k = p.thrust_coeff;
    let lk = p.arm_length * k;
    let b = p.drag_torque_coeff;
    Wrench {
        thrust: k * (u[0] + u[1] + u[2] + u[3]),
        torque: Vector3::new(
            lk * (u[3] - u[1]),
            lk * (u[2] - u[0]),
            b * (u[0] - u[1] + u[2] - u[3]),
        ),
    }
}

/// ZYX (yaw-pitch-roll) body-to-world rotation applied to [0, 0, 1].
fn thrust_direction(euler: &Vector3<f64>) -> Vector3<f64> {
    let (sp, cp) = euler[0].sin_cos(); // roll phi
    let (st, ct) = euler[1].sin_cos(); // pitch theta
    let (sy, cy) = euler[2].sin_cos(); // yaw psi
    Vector3::new(cy * st * cp + sy * sp, sy * st * cp - cy * sp, ct * cp)
}

/// Continuous-time state derivative.
///
/// Translational: xi_ddot = (R(eta) [0,0,T]^T - drag .* xi_dot + f_ext)/m - [0,0,g]^T.
/// Rotational: diagonal-inertia Euler equations applied to the Euler rates
/// directly, I eta_ddot = tau - eta_dot x (I eta_dot), without the
/// Euler-rate-to-body-rate Jacobian; a small-angle model.
pub fn derivative(
    x: &State12,
    u: &Input4,
    p: &QuadParams,
    f_ext: &ExternalForce,
) -> Result<StateRate> {
    let eta = x.euler();
    if eta[1].abs() >= std::f64::consts::FRAC_PI_2 - SINGULARITY_MARGIN {
        return Err(Error::Singularity { pitch: eta[1] });
    }

    let w = allocate(u, p);
    let vel = x.velocity();
    let rates = x.euler_rates();

    let thrust_world = thrust_direction(&eta) * w.thrust;
    let drag = Vector3::new(
        p.linear_drag[0] * vel[0],
        p.linear_drag[1] * vel[1],
        p.linear_drag[2] * vel[2],
    );
    let accel = (thrust_world - drag + f_ext.0) / p.mass - Vector3::new(0.0, 0.0, p.gravity);

    let inertia = Vector3::new(p.inertia[0], p.inertia[1], p.inertia[2]);
    let i_rates = rates.component_mul(&inertia);
    let gyro = rates.cross(&i_rates);
    let ang_accel = (w.torque - gyro).component_div(&inertia);

    let mut rate = StateRate::zeros();
    rate.fixed_rows_mut::<3>(0).copy_from(&vel);
    rate.fixed_rows_mut::<3>(3).copy_from(&rates);
    rate.fixed_rows_mut::<3>(6).copy_from(&accel);
    rate.fixed_rows_mut::<3>(9).copy_from(&ang_accel);
    Ok(rate)
}

/// One classical 4th-order Runge-Kutta step holding `u` constant over `dt`.
pub fn step_rk4(
    x: &State12,
    u: &Input4,
    p: &QuadParams,
    f_ext: &ExternalForce,
    dt: f64,
) -> Result<State12> {
    let k1 = derivative(x, u, p, f_ext)?;
    let k2 = derivative(&State12(x.0 + k1 * (dt / 2.0)), u, p, f_ext)?;
    let k3 = derivative(&State12(x.0 + k2 * (dt / 2.0)), u, p, f_ext)?;
    let k4 = derivative(&State12(x.0 + k3 * dt), u, p, f_ext)?;
    Ok(State12(x.0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> QuadParams {
        QuadParams::default()
    }

    #[test]
    fn allocate_zero_input() {
        let w = allocate(&Input4::zeros(), &params());
        assert_eq!(w.thrust, 0.0);
        assert_eq!(w.torque, Vector3::zeros());
    }

    #[test]
    fn allocate_symmetric_input() {
        let p = params();
        let h = 1.7;
        let w = allocate(&Input4::splat(h), &p);
        assert_relative_eq!(w.thrust, 4.0 * p.thrust_coeff * h, max_relative = 1e-15);
        assert_eq!(w.torque, Vector3::zeros());
    }

    #[test]
    fn allocate_hand_computed() {
        // k = 0.4591, l = 0.225, b = 0.01, u = (1,2,3,4), evaluated by hand:
        //   T = 0.4591 * 10 = 4.591
        //   tau_phi = 0.225 * 0.4591 * (4 - 2) = 0.206595
        //   tau_theta = 0.225 * 0.4591 * (3 - 1) = 0.206595
        //   tau_psi = 0.01 * (1 - 2 + 3 - 4) = -0.02
        let mut p = params();
        p.thrust_coeff = 0.4591;
        p.arm_length = 0.225;
        p.drag_torque_coeff = 0.01;
        let w = allocate(&Input4::from_array([1.0, 2.0, 3.0, 4.0]), &p);
        assert_relative_eq!(w.thrust, 4.591, epsilon = 1e-12);
        assert_relative_eq!(w.torque[0], 0.206595, epsilon = 1e-12);
        assert_relative_eq!(w.torque[1], 0.206595, epsilon = 1e-12);
        assert_relative_eq!(w.torque[2], -0.02, epsilon = 1e-12);
    }

    #[test]
    fn allocate_is_linear() {
        let p = params();
        let u = Input4::from_array([0.3, 1.2, 2.7, 4.9]);
        let v = Input4::from_array([1.1, 0.2, 3.3, 0.7]);
        let (a, b) = (2.5, -0.75);
        let combined = allocate(&Input4(u.0 * a + v.0 * b), &p);
        let wu = allocate(&u, &p);
        let wv = allocate(&v, &p);
        assert_relative_eq!(
            combined.thrust,
            a * wu.thrust + b * wv.thrust,
            epsilon = 1e-12
        );
        for i in 0..3 {
            assert_relative_eq!(
                combined.torque[i],
                a * wu.torque[i] + b * wv.torque[i],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn derivative_hover_is_equilibrium() {
        let p = params();
        let mut x = State12::zeros();
        x[2] = 3.0;
        let rate = derivative(&x, &p.hover_input(), &p, &ExternalForce::default()).unwrap();
        for i in 0..12 {
            assert!(rate[i].abs() < 1e-12, "entry {i} = {}", rate[i]);
        }
    }

    #[test]
    fn derivative_free_fall() {
        let mut p = params();
        p.linear_drag = [0.0; 3];
        let rate = derivative(
            &State12::zeros(),
            &Input4::zeros(),
            &p,
            &ExternalForce::default(),
        )
        .unwrap();
        assert_eq!(rate[6], 0.0);
        assert_eq!(rate[7], 0.0);
        assert_relative_eq!(rate[8], -p.gravity, epsilon = 1e-15);
    }

    #[test]
    fn derivative_tilted_hover_matches_rotation_matrix() {
        // Independent check of the thrust tilt: build R(eta) via nalgebra's
        // own Euler-angle rotation and compare accelerations at theta = 0.1.
        let mut p = params();
        p.linear_drag = [0.0; 3];
        let mut x = State12::zeros();
        x[4] = 0.1;
        let u = p.hover_input();
        let rate = derivative(&x, &u, &p, &ExternalForce::default()).unwrap();

        let thrust = allocate(&u, &p).thrust;
        let rot = nalgebra::Rotation3::from_euler_angles(0.0, 0.1, 0.0);
        let expected =
            rot * Vector3::new(0.0, 0.0, thrust) / p.mass - Vector3::new(0.0, 0.0, p.gravity);
        assert_relative_eq!(rate[6], expected[0], epsilon = 1e-12);
        assert_relative_eq!(rate[7], expected[1], epsilon = 1e-12);
        assert_relative_eq!(rate[8], expected[2], epsilon = 1e-12);
        // Small-angle sanity: x acceleration is close to g * theta.
        assert_relative_eq!(rate[6], p.gravity * 0.1, epsilon = 2e-3);
    }

    #[test]
    fn derivative_vertical_accel_yaw_invariant() {
        let p = params();
        let u = Input4::from_array([2.0, 2.1, 2.2, 2.3]);
        let mut base = State12::zeros();
        let r0 = derivative(&base, &u, &p, &ExternalForce::default()).unwrap();
        for psi in [0.4, -1.3, 2.9] {
            base[5] = psi;
            let r = derivative(&base, &u, &p, &ExternalForce::default()).unwrap();
            assert_relative_eq!(r[8], r0[8], epsilon = 1e-14);
        }
    }

    #[test]
    fn derivative_reports_singularity() {
        let mut x = State12::zeros();
        x[4] = std::f64::consts::FRAC_PI_2;
        let err = derivative(&x, &Input4::zeros(), &params(), &ExternalForce::default());
        assert!(matches!(err, Err(Error::Singularity { .. })));
    }

    #[test]
    fn external_force_enters_acceleration() {
        let p = params();
        let f = ExternalForce(Vector3::new(0.468, 0.0, 0.0));
        let rate = derivative(&State12::zeros(), &p.hover_input(), &p, &f).unwrap();
        assert_relative_eq!(rate[6], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rk4_hover_fixed_point() {
        let p = params();
        let u = p.hover_input();
        let mut x = State12::zeros();
        x[2] = 1.0;
        let x0 = x;
        for _ in 0..100 {
            x = step_rk4(&x, &u, &p, &ExternalForce::default(), 0.01).unwrap();
        }
        let drift = (x.position() - x0.position()).norm();
        assert!(drift < 1e-6, "position drift {drift}");
    }

    #[test]
    fn rk4_constant_acceleration_exact() {
        // Free fall without drag is constant acceleration; RK4 integrates it
        // exactly: dz = -g dt^2 / 2 = -0.04905 for dt = 0.1, g = 9.81.
        let mut p = params();
        p.linear_drag = [0.0; 3];
        let x = step_rk4(
            &State12::zeros(),
            &Input4::zeros(),
            &p,
            &ExternalForce::default(),
            0.1,
        )
        .unwrap();
        assert_relative_eq!(x[2], -0.04905, epsilon = 1e-15);
        assert_relative_eq!(x[8], -0.981, epsilon = 1e-15);
    }

    /// Generic off-equilibrium maneuver used by the convergence checks.
    pub(crate) fn maneuver_start() -> (State12, Input4) {
        let mut x = State12::zeros();
        x[3] = 0.05;
        x[4] = -0.04;
        x[6] = 0.3;
        x[8] = -0.2;
        x[9] = 0.1;
        (x, Input4::from_array([2.6, 2.45, 2.55, 2.5]))
    }

    fn integrate(x0: &State12, u: &Input4, p: &QuadParams, dt: f64, t_end: f64) -> State12 {
        let steps = (t_end / dt).round() as usize;
        let mut x = *x0;
        for _ in 0..steps {
            x = step_rk4(&x, u, p, &ExternalForce::default(), dt).unwrap();
        }
        x
    }

    #[test]
    fn rk4_single_step_halving() {
        // One dt step vs two dt/2 steps against a dt/64 reference: the error
        // shrinks by roughly 2^4 = 16.
        let p = params();
        let (x0, u) = maneuver_start();
        let dt = 0.1;
        let reference = integrate(&x0, &u, &p, dt / 64.0, dt);
        let coarse = step_rk4(&x0, &u, &p, &ExternalForce::default(), dt).unwrap();
        let halved = integrate(&x0, &u, &p, dt / 2.0, dt);
        let e1 = (coarse.0 - reference.0).norm();
        let e2 = (halved.0 - reference.0).norm();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk4_global_order_four() {
        let p = params();
        let (x0, u) = maneuver_start();
        let reference = integrate(&x0, &u, &p, 0.02 / 64.0, 1.0);
        let e1 = (integrate(&x0, &u, &p, 0.02, 1.0).0 - reference.0).norm();
        let e2 = (integrate(&x0, &u, &p, 0.01, 1.0).0 - reference.0).norm();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}
