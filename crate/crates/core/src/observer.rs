//! High-gain disturbance observers.
//!
//! The auxiliary-variable form never differentiates a measurement. Each loop
//! keeps `gamma = d_hat - x / eps` and integrates
//!
//! ```text
//! gamma' = -(gamma + x / eps) / eps + forcing / eps
//! ```
//!
//! with `forcing = g e3 - u1vec` on the translational loop (`x = x2`) and
//! `forcing = -f2(x4) - u2vec` on the rotational loop (`x = x4`). The estimate
//! is recovered as `d_hat = gamma + x / eps`, and its error obeys
//! `d_tilde' = -d_tilde / eps + d'`.
//!
//! The naive form integrates `d_hat' = (x' + forcing - d_hat) / eps` and needs
//! an estimate of the state derivative `x'`.

use crate::integrator::{rk4_step, IntegrationError};
use crate::model::Vec3;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserverError {
    #[error("observer gain epsilon must be positive and finite, got {0}")]
    NonPositiveEpsilon(f64),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    Translational,
    Rotational,
}

/// Auxiliary-variable observer state for one loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgdoState {
    pub gamma: Vec3,
    pub epsilon: f64,
    pub loop_kind: LoopKind,
}

/// Disturbance estimates for both loops.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceEstimate {
    /// Translational estimate (m/s^2).
    pub d1_hat: Vec3,
    /// Rotational estimate (rad/s^2).
    pub d2_hat: Vec3,
}

fn check_epsilon(epsilon: f64) -> Result<(), ObserverError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(ObserverError::NonPositiveEpsilon(epsilon))
    }
}

/// Initialise `gamma` so that the reconstructed estimate equals `d_hat0`.
pub fn hgdo_init(
    x: &Vec3,
    epsilon: f64,
    d_hat0: &Vec3,
    loop_kind: LoopKind,
) -> Result<HgdoState, ObserverError> {
    check_epsilon(epsilon)?;
    Ok(HgdoState {
        gamma: d_hat0 - x / epsilon,
        epsilon,
        loop_kind,
    })
}

/// `d_hat = gamma + x / eps`.
pub fn reconstruct(st: &HgdoState, x: &Vec3) -> Vec3 {
    st.gamma + x / st.epsilon
}

/// Right-hand side of the auxiliary dynamics. `forcing` is the model term
/// (`g e3 - u1vec` or `-f2(x4) - u2vec`).
pub fn gamma_dot(gamma: &Vec3, x: &Vec3, forcing: &Vec3, epsilon: f64) -> Vec3 {
    (-(gamma + x / epsilon) + forcing) / epsilon
}

/// Translational forcing term `g e3 - u1vec`.
pub fn translational_forcing(u1vec: &Vec3, g: f64) -> Vec3 {
    Vec3::new(0.0, 0.0, g) - u1vec
}

/// Rotational forcing term `-f2(x4) - u2vec`.
pub fn rotational_forcing(f2val: &Vec3, u2vec: &Vec3) -> Vec3 {
    -f2val - u2vec
}

fn step_gamma(st: &HgdoState, x: &Vec3, forcing: &Vec3, dt: f64) -> Result<HgdoState, ObserverError> {
    let eps = st.epsilon;
    let gamma = rk4_step(|_, g: &Vector3<f64>| gamma_dot(g, x, forcing, eps), &st.gamma, 0.0, dt)?;
    Ok(HgdoState { gamma, ..*st })
}

/// One step of the translational observer with `x2` and `u1vec` held over
/// the step.
pub fn hgdo_step_trans(
    st: &HgdoState,
    x2: &Vec3,
    u1vec: &Vec3,
    g: f64,
    dt: f64,
) -> Result<HgdoState, ObserverError> {
    step_gamma(st, x2, &translational_forcing(u1vec, g), dt)
}

/// One step of the rotational observer with `x4`, `f2(x4)` and `u2vec` held
/// over the step.
pub fn hgdo_step_rot(
    st: &HgdoState,
    x4: &Vec3,
    f2val: &Vec3,
    u2vec: &Vec3,
    dt: f64,
) -> Result<HgdoState, ObserverError> {
    step_gamma(st, x4, &rotational_forcing(f2val, u2vec), dt)
}

/// Right-hand side of the derivative-based observer.
pub fn naive_dot(d_hat: &Vec3, x_dot: &Vec3, forcing: &Vec3, epsilon: f64) -> Vec3 {
    (x_dot + forcing - d_hat) / epsilon
}

/// One step of the derivative-based observer with the derivative estimate and
/// model terms held over the step.
pub fn naive_hgdo_step(
    d_hat: &Vec3,
    x_dot_estimate: &Vec3,
    forcing: &Vec3,
    epsilon: f64,
    dt: f64,
) -> Result<Vec3, ObserverError> {
    check_epsilon(epsilon)?;
    Ok(rk4_step(
        |_, d: &Vector3<f64>| naive_dot(d, x_dot_estimate, forcing, epsilon),
        d_hat,
        0.0,
        dt,
    )?)
}

/// Backward difference of a sampled signal passed through a first-order
/// low-pass. Feeds the naive observer when only measurements are available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredDifference {
    time_constant: f64,
    prev: Option<Vec3>,
    value: Vec3,
}

impl FilteredDifference {
    pub fn new(time_constant: f64) -> Self {
        Self {
            time_constant,
            prev: None,
            value: Vec3::zeros(),
        }
    }

    pub fn update(&mut self, sample: &Vec3, dt: f64) -> Vec3 {
        if let Some(prev) = self.prev {
            let raw = (sample - prev) / dt;
            let alpha = if self.time_constant > 0.0 {
                1.0 - (-dt / self.time_constant).exp()
            } else {
                1.0
            };
            self.value += (raw - self.value) * alpha;
        }
        self.prev = Some(*sample);
        self.value
    }

    pub fn value(&self) -> Vec3 {
        self.value
    }
}
