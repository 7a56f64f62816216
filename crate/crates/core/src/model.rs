//! Quadrotor rigid-body model.
//!
//! Two plants live here. The canonical form integrates Euler angles and
//! Euler-angle rates directly, with the small-angle simplification that the
//! Euler rates obey the body-rate dynamics:
//!
//! ```text
//! x1' = x2
//! x2' = -g e3 + (u1 / m) b(eta) + d1
//! x3' = x4
//! x4' = f2(x4) + (u2/Jx, u3/Jy, u4/Jz) + d2
//! ```
//!
//! The full form keeps body rates as state and maps them to Euler rates
//! through `H(eta)`. It is used as a truth plant to measure what the
//! simplification costs.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Default rotor speed limit (rad/s).
pub const DEFAULT_MAX_ROTOR_SPEED: f64 = 2500.0;
/// Default guard on `|cos theta|` below which `H(eta)` is treated as singular.
pub const DEFAULT_GIMBAL_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("gimbal lock: |cos(theta)| = {cos_theta:e} is below the guard")]
    GimbalLock { cos_theta: f64 },
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(String),
}

fn default_max_rotor_speed() -> f64 {
    DEFAULT_MAX_ROTOR_SPEED
}

fn default_gimbal_guard() -> f64 {
    DEFAULT_GIMBAL_GUARD
}

/// Physical parameters of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Diagonal of the inertia matrix (kg m^2).
    pub inertia: Vec3,
    /// Rotor thrust coefficient (N s^2).
    pub thrust_coeff: f64,
    /// Rotor drag-torque coefficient (N m s^2).
    pub torque_coeff: f64,
    /// Distance from the centre of mass to each rotor (m).
    pub arm_length: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Upper limit on each rotor speed (rad/s).
    #[serde(default = "default_max_rotor_speed")]
    pub max_rotor_speed: f64,
    /// `|cos theta|` threshold for the Euler kinematics singularity.
    #[serde(default = "default_gimbal_guard")]
    pub gimbal_guard: f64,
}

impl VehicleParams {
    /// Crazyflie 2.1 class vehicle used for all the shipped scenarios.
    pub fn crazyflie() -> Self {
        Self {
            mass: 0.028,
            inertia: Vec3::new(1.4e-5, 1.4e-5, 2.17e-5),
            thrust_coeff: 2.88e-8,
            torque_coeff: 7.24e-10,
            arm_length: 0.092,
            gravity: 9.81,
            max_rotor_speed: DEFAULT_MAX_ROTOR_SPEED,
            gimbal_guard: DEFAULT_GIMBAL_GUARD,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let named = [
            ("mass", self.mass),
            ("inertia.x", self.inertia.x),
            ("inertia.y", self.inertia.y),
            ("inertia.z", self.inertia.z),
            ("thrust_coeff", self.thrust_coeff),
            ("torque_coeff", self.torque_coeff),
            ("arm_length", self.arm_length),
            ("gravity", self.gravity),
            ("max_rotor_speed", self.max_rotor_speed),
            ("gimbal_guard", self.gimbal_guard),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.gravity)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Largest body torque magnitude reachable per axis with rotor speeds in
    /// `[0, max_rotor_speed]`.
    pub fn max_torque(&self) -> Vec3 {
        let sq = self.max_rotor_speed * self.max_rotor_speed;
        let roll_pitch = self.arm_length * self.thrust_coeff * sq;
        let yaw = 2.0 * self.arm_length * self.torque_coeff * sq;
        Vec3::new(roll_pitch, roll_pitch, yaw)
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::crazyflie()
    }
}

/// Canonical-form state: position, velocity, Euler angles `(phi, theta, psi)`
/// and Euler-angle rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Vec3,
    pub attitude_rate: Vec3,
}

impl RigidState {
    pub fn is_finite(&self) -> bool {
        [self.position, self.velocity, self.attitude, self.attitude_rate]
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
    }

    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[0..3].copy_from_slice(self.position.as_slice());
        out[3..6].copy_from_slice(self.velocity.as_slice());
        out[6..9].copy_from_slice(self.attitude.as_slice());
        out[9..12].copy_from_slice(self.attitude_rate.as_slice());
        out
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            position: Vec3::new(s[0], s[1], s[2]),
            velocity: Vec3::new(s[3], s[4], s[5]),
            attitude: Vec3::new(s[6], s[7], s[8]),
            attitude_rate: Vec3::new(s[9], s[10], s[11]),
        }
    }
}

/// Full-model state: Euler angles for orientation, body rates for rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidBodyState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Vec3,
    pub body_rate: Vec3,
}

impl RigidBodyState {
    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[0..3].copy_from_slice(self.position.as_slice());
        out[3..6].copy_from_slice(self.velocity.as_slice());
        out[6..9].copy_from_slice(self.attitude.as_slice());
        out[9..12].copy_from_slice(self.body_rate.as_slice());
        out
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            position: Vec3::new(s[0], s[1], s[2]),
            velocity: Vec3::new(s[3], s[4], s[5]),
            attitude: Vec3::new(s[6], s[7], s[8]),
            body_rate: Vec3::new(s[9], s[10], s[11]),
        }
    }
}

/// Rotor angular speed magnitudes `Omega_1..Omega_4` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotorSpeeds(pub Vector4<f64>);

impl RotorSpeeds {
    pub fn uniform(omega: f64) -> Self {
        Self(Vector4::repeat(omega))
    }

    pub fn squared(&self) -> Vector4<f64> {
        self.0.component_mul(&self.0)
    }
}

/// Total thrust `u1` (N) and body torques `(u2, u3, u4)` (N m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WrenchCommand {
    pub thrust: f64,
    pub torque: Vec3,
}

impl WrenchCommand {
    pub fn new(thrust: f64, torque: Vec3) -> Self {
        Self { thrust, torque }
    }

    /// Translational virtual input `(u1 / m) b(eta)` (m/s^2).
    pub fn virtual_accel(&self, attitude: &Vec3, p: &VehicleParams) -> Vec3 {
        thrust_direction(attitude) * (self.thrust / p.mass)
    }

    /// Rotational virtual input `(u2/Jx, u3/Jy, u4/Jz)` (rad/s^2).
    pub fn angular_accel(&self, p: &VehicleParams) -> Vec3 {
        self.torque.component_div(&p.inertia)
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.torque.iter().all(|c| c.is_finite())
    }
}

/// Body-to-inertial direction cosine matrix for ZYX Euler angles.
pub fn rotation_matrix(eta: &Vec3) -> Matrix3<f64> {
    let (sphi, cphi) = eta.x.sin_cos();
    let (sth, cth) = eta.y.sin_cos();
    let (spsi, cpsi) = eta.z.sin_cos();
    Matrix3::new(
        cth * cpsi,
        sphi * sth * cpsi - cphi * spsi,
        cphi * sth * cpsi + sphi * spsi,
        cth * spsi,
        sphi * sth * spsi + cphi * cpsi,
        cphi * sth * spsi - sphi * cpsi,
        -sth,
        sphi * cth,
        cphi * cth,
    )
}

/// Third column of the rotation matrix: the body z axis in the inertial frame.
pub fn thrust_direction(eta: &Vec3) -> Vec3 {
    let (sphi, cphi) = eta.x.sin_cos();
    let (sth, cth) = eta.y.sin_cos();
    let (spsi, cpsi) = eta.z.sin_cos();
    Vec3::new(
        cphi * sth * cpsi + sphi * spsi,
        cphi * sth * spsi - sphi * cpsi,
        cphi * cth,
    )
}

/// `H(eta)` with `eta' = H(eta) omega_body`.
pub fn euler_rate_matrix(eta: &Vec3, gimbal_guard: f64) -> Result<Matrix3<f64>, ModelError> {
    let (sphi, cphi) = eta.x.sin_cos();
    let cth = eta.y.cos();
    if cth.abs() <= gimbal_guard {
        return Err(ModelError::GimbalLock { cos_theta: cth });
    }
    let tth = eta.y.sin() / cth;
    Ok(Matrix3::new(
        1.0,
        sphi * tth,
        cphi * tth,
        0.0,
        cphi,
        -sphi,
        0.0,
        sphi / cth,
        cphi / cth,
    ))
}

/// Total thrust and body torques produced by the four rotors.
pub fn rotor_wrench(omega: &RotorSpeeds, p: &VehicleParams) -> WrenchCommand {
    let sq = omega.squared();
    let thrust = p.thrust_coeff * sq.sum();
    let lkt = p.arm_length * p.thrust_coeff;
    let lkq = p.arm_length * p.torque_coeff;
    let torque = Vec3::new(
        lkt * (sq[3] - sq[1]),
        lkt * (sq[2] - sq[0]),
        lkq * (sq[0] - sq[1] + sq[2] - sq[3]),
    );
    WrenchCommand { thrust, torque }
}

/// Mixing matrix mapping `(u1, u2, u3, u4)` to squared rotor speeds. It is the
/// exact inverse of [`rotor_wrench`].
pub fn mixing_matrix(p: &VehicleParams) -> Matrix4<f64> {
    let a = 1.0 / (4.0 * p.thrust_coeff);
    let b = 1.0 / (2.0 * p.arm_length * p.thrust_coeff);
    let c = 1.0 / (4.0 * p.arm_length * p.torque_coeff);
    Matrix4::new(
        a, 0.0, -b, c, //
        a, -b, 0.0, -c, //
        a, 0.0, b, c, //
        a, b, 0.0, -c,
    )
}

/// Result of [`allocate_rotors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub speeds: RotorSpeeds,
    /// At least one squared speed came out negative and was clamped to zero.
    pub negative_clamped: bool,
    /// At least one speed exceeded the rotor limit and was clamped.
    pub speed_limited: bool,
}

impl Allocation {
    pub fn saturated(&self) -> bool {
        self.negative_clamped || self.speed_limited
    }
}

/// Solve for rotor speeds producing the commanded wrench, clamping to the
/// feasible range instead of failing.
pub fn allocate_rotors(w: &WrenchCommand, p: &VehicleParams) -> Allocation {
    let u = Vector4::new(w.thrust, w.torque.x, w.torque.y, w.torque.z);
    let sq = mixing_matrix(p) * u;
    let mut negative_clamped = false;
    let mut speed_limited = false;
    let speeds = sq.map(|s| {
        let s = if s < 0.0 {
            negative_clamped = true;
            0.0
        } else {
            s
        };
        let omega = s.sqrt();
        if omega > p.max_rotor_speed {
            speed_limited = true;
            p.max_rotor_speed
        } else {
            omega
        }
    });
    Allocation {
        speeds: RotorSpeeds(speeds),
        negative_clamped,
        speed_limited,
    }
}

/// Gyroscopic coupling term of the rotational canonical dynamics.
pub fn f2(x4: &Vec3, p: &VehicleParams) -> Vec3 {
    let j = &p.inertia;
    Vec3::new(
        (j.y - j.z) / j.x * x4.y * x4.z,
        (j.z - j.x) / j.y * x4.x * x4.z,
        (j.x - j.y) / j.z * x4.x * x4.y,
    )
}

/// Time derivative of the canonical-form state.
///
/// `u1vec` and `u2vec` are the virtual inputs, `d1`/`d2` the lumped
/// disturbances in acceleration units.
pub fn canonical_deriv(
    s: &RigidState,
    u1vec: &Vec3,
    u2vec: &Vec3,
    d1: &Vec3,
    d2: &Vec3,
    p: &VehicleParams,
) -> RigidState {
    RigidState {
        position: s.velocity,
        velocity: -p.gravity_vector() + u1vec + d1,
        attitude: s.attitude_rate,
        attitude_rate: f2(&s.attitude_rate, p) + u2vec + d2,
    }
}

/// Body-frame force (N) and torque (N m) disturbances for the full model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyDisturbance {
    pub force: Vec3,
    pub torque: Vec3,
}

/// Time derivative of the full rigid-body state (Newton for translation,
/// Euler's equations with the gyroscopic cross product for rotation).
pub fn full_nonlinear_deriv(
    s: &RigidBodyState,
    wrench: &WrenchCommand,
    d: &BodyDisturbance,
    p: &VehicleParams,
) -> Result<RigidBodyState, ModelError> {
    let h = euler_rate_matrix(&s.attitude, p.gimbal_guard)?;
    let r = rotation_matrix(&s.attitude);
    let body_force = Vec3::new(0.0, 0.0, wrench.thrust) + d.force;
    let accel = -p.gravity_vector() + r * body_force / p.mass;
    let w = &s.body_rate;
    let jw = p.inertia.component_mul(w);
    let omega_dot = (-w.cross(&jw) + wrench.torque + d.torque).component_div(&p.inertia);
    Ok(RigidBodyState {
        position: s.velocity,
        velocity: accel,
        attitude: h * w,
        body_rate: omega_dot,
    })
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Wrap roll and yaw, clamp pitch to `[-pi/2, pi/2]`. Returns `true` when the
/// pitch clamp was active.
pub fn normalize_attitude(eta: &mut Vec3) -> bool {
    eta.x = wrap_angle(eta.x);
    eta.z = wrap_angle(eta.z);
    let half = PI / 2.0;
    if eta.y > half || eta.y < -half {
        eta.y = eta.y.clamp(-half, half);
        true
    } else {
        false
    }
}
