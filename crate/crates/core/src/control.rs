//! Cascaded sliding-mode controller.
//!
//! The outer loop turns position tracking errors into a desired acceleration
//! vector, which is converted into an attitude setpoint and total thrust. The
//! inner loop turns attitude errors into body torques. Both loops use a
//! boundary-layer saturation in place of the sign function and clamp their
//! outputs to the configured actuator limits.

use crate::model::{wrap_angle, Vec3, VehicleParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("vertical acceleration command {uz} is below the extraction guard {uz_min}")]
    ThrustSingularity { uz: f64, uz_min: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

fn default_lambda() -> Vec3 {
    Vec3::new(0.3580, 0.5058, 0.3405)
}
fn default_k1() -> Vec3 {
    Vec3::new(5.2608, 5.0176, 5.4351)
}
fn default_k2() -> Vec3 {
    Vec3::new(8.0568, 13.6547, 1.8914)
}
fn default_l1() -> Vec3 {
    Vec3::new(2.6304, 2.5088, 2.7176)
}
fn default_l2() -> Vec3 {
    Vec3::new(4.0284, 6.8274, 0.9457)
}
fn default_mu() -> f64 {
    0.05
}
fn default_uz_min() -> f64 {
    2.0
}

/// Sliding-mode gains and output limits.
///
/// Switching and damping gains are stored as positive magnitudes and enter
/// the control law with a plus sign. `l1`/`l2` hold the diagonals of the
/// damping matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcGains {
    #[serde(default = "default_lambda")]
    pub lambda1: Vec3,
    #[serde(default = "default_lambda")]
    pub lambda2: Vec3,
    #[serde(default = "default_k1")]
    pub k1: Vec3,
    #[serde(default = "default_k2")]
    pub k2: Vec3,
    #[serde(default = "default_l1")]
    pub l1: Vec3,
    #[serde(default = "default_l2")]
    pub l2: Vec3,
    /// Boundary-layer width.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Total thrust limit (N). Defaults to twice the hover thrust.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1_max: Option<f64>,
    /// Per-axis torque limit (N m). Defaults to the rotor-speed limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<Vec3>,
    /// Smallest vertical acceleration accepted by the attitude extraction.
    #[serde(default = "default_uz_min")]
    pub uz_min: f64,
}

impl Default for SmcGains {
    fn default() -> Self {
        Self {
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            k1: default_k1(),
            k2: default_k2(),
            l1: default_l1(),
            l2: default_l2(),
            mu: default_mu(),
            u1_max: None,
            tau_max: None,
            uz_min: default_uz_min(),
        }
    }
}

impl SmcGains {
    pub fn u1_limit(&self, p: &VehicleParams) -> f64 {
        self.u1_max.unwrap_or(2.0 * p.hover_thrust())
    }

    pub fn tau_limit(&self, p: &VehicleParams) -> Vec3 {
        self.tau_max.unwrap_or_else(|| p.max_torque())
    }

    pub fn validate(&self, p: &VehicleParams) -> Result<(), ControlError> {
        let positive = |name: &str, v: &Vec3| {
            if v.iter().all(|x| *x > 0.0 && x.is_finite()) {
                Ok(())
            } else {
                Err(ControlError::InvalidGains(format!("{name} must have positive components, got {v:?}")))
            }
        };
        positive("lambda1", &self.lambda1)?;
        positive("lambda2", &self.lambda2)?;
        positive("l1", &self.l1)?;
        positive("l2", &self.l2)?;
        if !self.k1.iter().chain(self.k2.iter()).all(|x| *x >= 0.0 && x.is_finite()) {
            return Err(ControlError::InvalidGains("k1 and k2 must be non-negative".into()));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ControlError::InvalidGains(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.uz_min > 0.0) {
            return Err(ControlError::InvalidGains(format!("uz_min must be > 0, got {}", self.uz_min)));
        }
        let u1 = self.u1_limit(p);
        if !(u1 > self.uz_min * p.mass) {
            return Err(ControlError::InvalidGains(format!(
                "u1_max {u1} must exceed mass * uz_min = {}",
                self.uz_min * p.mass
            )));
        }
        positive("tau_max", &self.tau_limit(p))
    }
}

/// `s = e_dot + lambda . e`.
pub fn sliding_surface(e: &Vec3, e_dot: &Vec3, lambda: &Vec3) -> Vec3 {
    e_dot + lambda.component_mul(e)
}

/// Componentwise `s / mu` clipped to `[-1, 1]`.
pub fn sat(s: &Vec3, mu: f64) -> Vec3 {
    s.map(|v| (v / mu).clamp(-1.0, 1.0))
}

/// Position and derivatives of a reference at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionRef {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
}

/// Outer-loop result.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OuterOutput {
    /// Commanded acceleration vector after limiting (m/s^2).
    pub u_vec: Vec3,
    pub e: Vec3,
    pub e_dot: Vec3,
    pub s: Vec3,
    /// The raw command exceeded the thrust envelope.
    pub limited: bool,
    /// The raw vertical command fell below the extraction guard.
    pub thrust_singular: bool,
}

/// Clamp an acceleration command so that `u_z >= uz_min` and the implied
/// thrust `m |u|` stays below `u1_max`. Vertical authority takes priority;
/// the horizontal part is scaled down when the total is too large.
fn limit_accel(u: Vec3, p: &VehicleParams, gains: &SmcGains) -> (Vec3, bool, bool) {
    let a_max = gains.u1_limit(p) / p.mass;
    let mut out = u;
    let singular = out.z < gains.uz_min;
    let mut limited = singular;
    if singular {
        out.z = gains.uz_min;
    }
    if out.z > a_max {
        out.z = a_max;
        limited = true;
    }
    let h_max = (a_max * a_max - out.z * out.z).max(0.0).sqrt();
    let h = (out.x * out.x + out.y * out.y).sqrt();
    if h > h_max {
        let scale = h_max / h;
        out.x *= scale;
        out.y *= scale;
        limited = true;
    }
    (out, limited, singular)
}

/// Position loop: desired acceleration vector from tracking errors.
pub fn outer_loop(
    x1: &Vec3,
    x2: &Vec3,
    reference: &PositionRef,
    d1_hat: &Vec3,
    gains: &SmcGains,
    p: &VehicleParams,
) -> OuterOutput {
    let e = reference.pos - x1;
    let e_dot = reference.vel - x2;
    let s = sliding_surface(&e, &e_dot, &gains.lambda1);
    let raw = reference.acc + p.gravity_vector() - d1_hat
        + gains.lambda1.component_mul(&e_dot)
        + gains.k1.component_mul(&sat(&s, gains.mu))
        + gains.l1.component_mul(&s);
    let (u_vec, limited, thrust_singular) = limit_accel(raw, p, gains);
    OuterOutput {
        u_vec,
        e,
        e_dot,
        s,
        limited,
        thrust_singular,
    }
}

/// Desired attitude, its derivatives and the total thrust.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttitudeSetpoint {
    /// `(phi_d, theta_d, psi_d)` in rad.
    pub eta: Vec3,
    pub rate: Vec3,
    pub accel: Vec3,
    /// Total thrust `u1` (N).
    pub thrust: f64,
}

/// Roll, pitch and thrust that realise the acceleration vector `u` at yaw
/// `psi_d`. Derivative fields are left at zero.
pub fn extract_attitude(u: &Vec3, psi_d: f64, mass: f64, uz_min: f64) -> Result<AttitudeSetpoint, ControlError> {
    if !(u.z >= uz_min) {
        return Err(ControlError::ThrustSingularity { uz: u.z, uz_min });
    }
    let (sp, cp) = psi_d.sin_cos();
    let theta = ((u.x * cp + u.y * sp) / u.z).atan();
    let phi = (theta.cos() * (u.x * sp - u.y * cp) / u.z).atan();
    let thrust = mass * u.z / (phi.cos() * theta.cos());
    Ok(AttitudeSetpoint {
        eta: Vec3::new(phi, theta, psi_d),
        thrust,
        ..Default::default()
    })
}

/// Inner-loop result.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InnerOutput {
    /// Body torques after clamping (N m).
    pub torque: Vec3,
    /// Angular acceleration actually commanded, `torque ./ J`.
    pub u2_vec: Vec3,
    pub e: Vec3,
    pub e_dot: Vec3,
    pub s: Vec3,
    pub saturated: bool,
}

/// Attitude loop: body torques from attitude errors.
pub fn inner_loop(
    x3: &Vec3,
    x4: &Vec3,
    setpoint: &AttitudeSetpoint,
    d2_hat: &Vec3,
    f2val: &Vec3,
    gains: &SmcGains,
    p: &VehicleParams,
) -> InnerOutput {
    let mut e = setpoint.eta - x3;
    e.z = wrap_angle(e.z);
    let e_dot = setpoint.rate - x4;
    let s = sliding_surface(&e, &e_dot, &gains.lambda2);
    let raw = setpoint.accel - f2val - d2_hat
        + gains.lambda2.component_mul(&e_dot)
        + gains.k2.component_mul(&sat(&s, gains.mu))
        + gains.l2.component_mul(&s);
    let limit = gains.tau_limit(p);
    let unclamped = raw.component_mul(&p.inertia);
    let torque = unclamped.zip_map(&limit, |t, l| t.clamp(-l, l));
    InnerOutput {
        torque,
        u2_vec: torque.component_div(&p.inertia),
        e,
        e_dot,
        s,
        saturated: torque != unclamped,
    }
}

/// Per-channel check `k > epsilon (|d_tilde(0)| + delta)`.
pub fn gain_check(k: &Vec3, epsilon: f64, d_tilde0: &Vec3, delta: &Vec3) -> [bool; 3] {
    std::array::from_fn(|j| k[j] > epsilon * (d_tilde0[j].abs() + delta[j]))
}

/// Derivative estimates for a sampled attitude setpoint: backward
/// differences smoothed by a first-order low-pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetpointFilter {
    pub time_constant: f64,
    prev_eta: Option<Vec3>,
    prev_rate: Vec3,
    rate: Vec3,
    accel: Vec3,
}

impl SetpointFilter {
    pub fn new(time_constant: f64) -> Self {
        Self {
            time_constant,
            prev_eta: None,
            prev_rate: Vec3::zeros(),
            rate: Vec3::zeros(),
            accel: Vec3::zeros(),
        }
    }

    /// Feed a new setpoint sample taken `dt` after the previous one and
    /// return the filtered `(rate, accel)`.
    pub fn update(&mut self, eta: &Vec3, dt: f64) -> (Vec3, Vec3) {
        let alpha = dt / (self.time_constant + dt);
        if let Some(prev) = self.prev_eta {
            let mut diff = eta - prev;
            diff.z = wrap_angle(diff.z);
            self.rate += (diff / dt - self.rate) * alpha;
            let raw_accel = (self.rate - self.prev_rate) / dt;
            self.accel += (raw_accel - self.accel) * alpha;
        }
        self.prev_eta = Some(*eta);
        self.prev_rate = self.rate;
        (self.rate, self.accel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{canonical_deriv, thrust_direction, RigidState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn p() -> VehicleParams {
        VehicleParams::crazyflie()
    }

    #[test]
    fn sliding_surface_cases() {
        assert_eq!(sliding_surface(&Vec3::zeros(), &Vec3::zeros(), &default_lambda()), Vec3::zeros());
        let s = sliding_surface(&Vec3::new(0.1, 0.0, 0.0), &Vec3::zeros(), &default_lambda());
        assert_relative_eq!(s, Vec3::new(0.0358, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn surface_motion_decays_exponentially() {
        // On s = 0 the error obeys e' = -lambda e; integrate and compare.
        let lambda = default_lambda();
        let mut e = Vec3::new(0.2, -0.1, 0.05);
        let e0 = e;
        let dt = 1e-4;
        for _ in 0..20_000 {
            let e_dot = -lambda.component_mul(&e);
            assert!(sliding_surface(&e, &e_dot, &lambda).norm() < 1e-15);
            e = crate::integrator::rk4_step(|_, x: &Vec3| -lambda.component_mul(x), &e, 0.0, dt).unwrap();
        }
        for j in 0..3 {
            assert_relative_eq!(e[j], e0[j] * (-lambda[j] * 2.0).exp(), max_relative = 1e-10);
        }
    }

    #[test]
    fn sat_cases() {
        let mu = 0.05;
        assert_eq!(sat(&Vec3::zeros(), mu), Vec3::zeros());
        assert_relative_eq!(
            sat(&Vec3::new(2.0 * mu, -2.0 * mu, mu / 2.0), mu),
            Vec3::new(1.0, -1.0, 0.5),
            epsilon = 1e-15
        );
        let s = Vec3::new(1e-6, -3e-7, 0.2);
        assert_eq!(sat(&s, 1e-12), Vec3::new(1.0, -1.0, 1.0));
    }

    #[test]
    fn outer_loop_hover_and_cancellation() {
        let g = SmcGains::default();
        let r = PositionRef {
            pos: Vec3::new(0.0, 0.0, 0.5),
            ..Default::default()
        };
        let x1 = r.pos;
        let out = outer_loop(&x1, &Vec3::zeros(), &r, &Vec3::zeros(), &g, &p());
        assert_eq!(out.u_vec, Vec3::new(0.0, 0.0, 9.81));
        assert!(!out.limited);
        let out = outer_loop(&x1, &Vec3::zeros(), &r, &Vec3::new(0.0, 0.0, -0.2), &g, &p());
        assert_relative_eq!(out.u_vec, Vec3::new(0.0, 0.0, 9.81 + 0.2), epsilon = 1e-14);
    }

    #[test]
    fn outer_loop_single_channel_hand_value() {
        // u_x = k sat(0.0358 / 0.05) + L 0.0358 = 5.2608 * 0.716 + 2.6304 * 0.0358.
        let g = SmcGains::default();
        let r = PositionRef {
            pos: Vec3::new(0.1, 0.0, 0.5),
            ..Default::default()
        };
        let out = outer_loop(&Vec3::new(0.0, 0.0, 0.5), &Vec3::zeros(), &r, &Vec3::zeros(), &g, &p());
        assert_relative_eq!(out.u_vec.x, 3.86090112, epsilon = 1e-12);
        assert_eq!(out.u_vec.y, 0.0);
        assert_relative_eq!(out.u_vec.z, 9.81, epsilon = 1e-15);
    }

    #[test]
    fn outer_loop_limits_thrust() {
        let g = SmcGains::default();
        let pp = p();
        let r = PositionRef {
            pos: Vec3::new(5.0, -5.0, 10.0),
            ..Default::default()
        };
        let out = outer_loop(&Vec3::zeros(), &Vec3::zeros(), &r, &Vec3::zeros(), &g, &pp);
        assert!(out.limited);
        assert!(pp.mass * out.u_vec.norm() <= g.u1_limit(&pp) * (1.0 + 1e-12));
        let r = PositionRef {
            pos: Vec3::new(0.0, 0.0, -10.0),
            ..Default::default()
        };
        let out = outer_loop(&Vec3::zeros(), &Vec3::zeros(), &r, &Vec3::zeros(), &g, &pp);
        assert!(out.thrust_singular);
        assert_eq!(out.u_vec.z, g.uz_min);
    }

    #[test]
    fn feedforward_cancels_disturbance_exactly() {
        let pp = p();
        let g = SmcGains::default();
        let d1 = Vec3::new(0.1, -0.3, 0.25);
        let r = PositionRef {
            pos: Vec3::new(0.2, 0.1, 0.5),
            vel: Vec3::new(0.1, 0.0, -0.05),
            acc: Vec3::new(0.3, -0.2, 0.1),
        };
        let out = outer_loop(&r.pos, &r.vel, &r, &d1, &g, &pp);
        let st = RigidState {
            position: r.pos,
            velocity: r.vel,
            ..Default::default()
        };
        let acc = canonical_deriv(&st, &out.u_vec, &Vec3::zeros(), &d1, &Vec3::zeros(), &pp).velocity;
        assert_relative_eq!(acc, r.acc, epsilon = 1e-14);
    }

    #[test]
    fn extract_attitude_cases() {
        let m = p().mass;
        let sp = extract_attitude(&Vec3::new(0.0, 0.0, 9.81), 0.0, m, 2.0).unwrap();
        assert_eq!(sp.eta, Vec3::zeros());
        assert_relative_eq!(sp.thrust, 0.27468, epsilon = 1e-12);
        let a = 7.0;
        let sp = extract_attitude(&Vec3::new(a, 0.0, a), 0.0, m, 2.0).unwrap();
        assert_relative_eq!(sp.eta.y, FRAC_PI_4, epsilon = 1e-15);
        assert_eq!(sp.eta.x, 0.0);
        assert_relative_eq!(sp.thrust, 2f64.sqrt() * m * a, max_relative = 1e-14);
        assert!(matches!(
            extract_attitude(&Vec3::new(0.0, 0.0, 1.0), 0.0, m, 2.0),
            Err(ControlError::ThrustSingularity { .. })
        ));
    }

    #[test]
    fn inner_loop_cases() {
        let pp = p();
        let g = SmcGains::default();
        let sp = AttitudeSetpoint::default();
        let out = inner_loop(&Vec3::zeros(), &Vec3::zeros(), &sp, &Vec3::zeros(), &Vec3::zeros(), &g, &pp);
        assert_eq!(out.torque, Vec3::zeros());
        // Pure rejection: e = e_dot = 0, only -f2 - d2_hat remains.
        let f2v = Vec3::new(0.01, -0.02, 0.0);
        let c = Vec3::new(0.4, 0.0, 0.0);
        let out = inner_loop(&Vec3::zeros(), &Vec3::zeros(), &sp, &c, &f2v, &g, &pp);
        assert_relative_eq!(out.u2_vec, -f2v - c, epsilon = 1e-12);
        // Single roll channel: 8.0568 * 0.716 + 4.0284 * 0.0358 = 5.91288552
        let sp = AttitudeSetpoint {
            eta: Vec3::new(0.1, 0.0, 0.0),
            ..Default::default()
        };
        let out = inner_loop(&Vec3::zeros(), &Vec3::zeros(), &sp, &Vec3::zeros(), &Vec3::zeros(), &g, &pp);
        assert_relative_eq!(out.u2_vec.x, 5.91288552, epsilon = 1e-8);
        assert_relative_eq!(out.torque.x, 1.4e-5 * 5.91288552, epsilon = 1e-12);
        assert!(!out.saturated);
    }

    #[test]
    fn inner_loop_wraps_yaw_and_clamps() {
        let pp = p();
        let g = SmcGains::default();
        let sp = AttitudeSetpoint {
            eta: Vec3::new(0.0, 0.0, 3.1),
            ..Default::default()
        };
        let out = inner_loop(&Vec3::new(0.0, 0.0, -3.1), &Vec3::zeros(), &sp, &Vec3::zeros(), &Vec3::zeros(), &g, &pp);
        assert_relative_eq!(out.e.z, 6.2 - 2.0 * std::f64::consts::PI, epsilon = 1e-12);
        let sp = AttitudeSetpoint {
            eta: Vec3::new(1.0, -1.0, 0.0),
            ..Default::default()
        };
        let out = inner_loop(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 0.0), &sp, &Vec3::zeros(), &Vec3::zeros(), &SmcGains { tau_max: Some(Vec3::repeat(1e-5)), ..g }, &pp);
        assert!(out.saturated);
        assert_eq!(out.torque.x, 1e-5);
        assert_eq!(out.torque.y, -1e-5);
    }

    #[test]
    fn gain_check_cases() {
        assert_eq!(gain_check(&Vec3::repeat(0.2), 0.01, &Vec3::zeros(), &Vec3::repeat(10.0)), [true; 3]);
        assert_eq!(gain_check(&Vec3::repeat(0.05), 0.01, &Vec3::zeros(), &Vec3::repeat(10.0)), [false; 3]);
        assert_eq!(gain_check(&Vec3::repeat(1e-9), 0.08, &Vec3::zeros(), &Vec3::zeros()), [true; 3]);
        assert_eq!(gain_check(&Vec3::zeros(), 0.01, &Vec3::repeat(0.5), &Vec3::zeros()), [false; 3]);
    }

    #[test]
    fn setpoint_filter_tracks_ramp() {
        let mut f = SetpointFilter::new(0.04);
        let dt = 0.01;
        let mut out = (Vec3::zeros(), Vec3::zeros());
        for k in 0..500 {
            out = f.update(&Vec3::new(0.3 * k as f64 * dt, 0.0, 0.0), dt);
        }
        assert_relative_eq!(out.0.x, 0.3, epsilon = 1e-9);
        assert!(out.1.norm() < 1e-9);
    }

    #[test]
    fn defaults_validate() {
        let pp = p();
        let g = SmcGains::default();
        g.validate(&pp).unwrap();
        assert_relative_eq!(g.u1_limit(&pp), 2.0 * 0.028 * 9.81, epsilon = 1e-15);
        assert!(SmcGains { mu: 0.0, ..g }.validate(&pp).is_err());
        assert!(SmcGains { l1: Vec3::new(-1.0, 1.0, 1.0), ..g }.validate(&pp).is_err());
    }

    proptest! {
        #[test]
        fn extraction_round_trip(ux in -15.0..15.0f64, uy in -15.0..15.0f64, uz in 2.0..20.0f64, psi in -3.1..3.1f64) {
            let u = Vec3::new(ux, uy, uz);
            let sp = extract_attitude(&u, psi, p().mass, 2.0).unwrap();
            prop_assert!(sp.eta.x.abs() < std::f64::consts::FRAC_PI_2);
            prop_assert!(sp.eta.y.abs() < std::f64::consts::FRAC_PI_2);
            let back = thrust_direction(&sp.eta) * sp.thrust / p().mass;
            prop_assert!((back - u).norm() <= 1e-9 * u.norm());
        }

        #[test]
        fn outputs_within_limits(
            ex in -20.0..20.0f64, ey in -20.0..20.0f64, ez in -20.0..20.0f64,
            vx in -20.0..20.0f64, vz in -20.0..20.0f64, dz in -50.0..50.0f64,
            a in -3.0..3.0f64, w in -50.0..50.0f64,
        ) {
            let pp = p();
            let g = SmcGains::default();
            let r = PositionRef { pos: Vec3::new(ex, ey, ez), ..Default::default() };
            let out = outer_loop(&Vec3::zeros(), &Vec3::new(vx, 0.0, vz), &r, &Vec3::new(0.0, 0.0, dz), &g, &pp);
            prop_assert!(out.u_vec.z >= g.uz_min);
            prop_assert!(pp.mass * out.u_vec.norm() <= g.u1_limit(&pp) * (1.0 + 1e-12));
            let sp = AttitudeSetpoint { eta: Vec3::new(a, -a, a), ..Default::default() };
            let inner = inner_loop(&Vec3::zeros(), &Vec3::new(w, -w, w), &sp, &Vec3::zeros(), &Vec3::zeros(), &g, &pp);
            let lim = g.tau_limit(&pp);
            for j in 0..3 {
                prop_assert!(inner.torque[j].abs() <= lim[j]);
            }
        }
    }
}
