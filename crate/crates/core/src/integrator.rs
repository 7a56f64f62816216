//! Fixed-step classical Runge-Kutta.

use nalgebra::SVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("derivative is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Advance `x` by one classical fourth-order Runge-Kutta step of size `dt`.
///
/// Fails as soon as any stage derivative contains NaN or infinity.
pub fn rk4_step<const N: usize, F>(
    mut f: F,
    x: &SVector<f64, N>,
    t: f64,
    dt: f64,
) -> Result<SVector<f64, N>, IntegrationError>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(IntegrationError::InvalidStep(dt));
    }
    let mut eval = |tt: f64, xx: &SVector<f64, N>| {
        let d = f(tt, xx);
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(IntegrationError::NonFinite { t: tt })
        }
    };
    let half = 0.5 * dt;
    let k1 = eval(t, x)?;
    let k2 = eval(t + half, &(x + k1 * half))?;
    let k3 = eval(t + half, &(x + k2 * half))?;
    let k4 = eval(t + dt, &(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}
