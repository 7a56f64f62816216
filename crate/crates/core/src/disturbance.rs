//! Disturbance and noise signals.
//!
//! Every signal evaluates to a 3-vector of components. A
//! [`DisturbanceSource`] routes component `j % 3` of its signal to each of the
//! disturbance channels it drives, so scalar signals simply broadcast and the
//! Dryden gust triple maps `(u, v, w)` onto `(x, y, z)` or `(phi, theta, psi)`.
//!
//! Deterministic signals are pure functions of time (and, for the gated and
//! ground-effect kinds, of position). Stochastic signals own a seeded RNG
//! stream and are resampled once per simulation step.

use crate::model::Vec3;
use nalgebra::{Matrix2, Matrix3, RowVector2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisturbanceError {
    #[error("signal `{0}` is not a differentiable function of time")]
    NonDifferentiable(&'static str),
    #[error("invalid signal parameter: {0}")]
    InvalidParameter(String),
}

/// Six lumped disturbance channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    X,
    Y,
    Z,
    Phi,
    Theta,
    Psi,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::X,
        Channel::Y,
        Channel::Z,
        Channel::Phi,
        Channel::Theta,
        Channel::Psi,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Z => "z",
            Channel::Phi => "phi",
            Channel::Theta => "theta",
            Channel::Psi => "psi",
        }
    }

    pub fn is_translational(self) -> bool {
        self.index() < 3
    }
}

fn default_mean_wind() -> f64 {
    1.11
}
fn default_altitude() -> f64 {
    0.5
}
fn default_gust_gain() -> Vec3 {
    Vec3::repeat(0.5)
}

/// Low-altitude Dryden turbulence settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrydenConfig {
    /// Mean wind speed, also used as the airspeed in the shaping filters (m/s).
    #[serde(default = "default_mean_wind")]
    pub mean_wind_speed: f64,
    /// Altitude used for the scale lengths (m). Clamped to the 10 ft floor of
    /// the low-altitude model.
    #[serde(default = "default_altitude")]
    pub altitude: f64,
    /// Gust velocity to disturbance-acceleration gain per axis (1/s).
    #[serde(default = "default_gust_gain")]
    pub gain: Vec3,
}

impl Default for DrydenConfig {
    fn default() -> Self {
        Self {
            mean_wind_speed: default_mean_wind(),
            altitude: default_altitude(),
            gain: default_gust_gain(),
        }
    }
}

const FT: f64 = 0.3048;

impl DrydenConfig {
    /// Scale lengths `(L_u, L_v, L_w)` in metres.
    pub fn scale_lengths(&self) -> Vec3 {
        let h = (self.altitude / FT).clamp(10.0, 1000.0);
        let lw = h;
        let luv = h / (0.177 + 0.000823 * h).powf(1.2);
        Vec3::new(luv, luv, lw) * FT
    }

    /// Turbulence intensities `(sigma_u, sigma_v, sigma_w)` in m/s, with the
    /// mean wind standing in for the 20 ft wind speed.
    pub fn intensities(&self) -> Vec3 {
        let h = (self.altitude / FT).clamp(10.0, 1000.0);
        let sw = 0.1 * self.mean_wind_speed;
        let suv = sw / (0.177 + 0.000823 * h).powf(0.4);
        Vec3::new(suv, suv, sw)
    }

    fn validate(&self) -> Result<(), DisturbanceError> {
        if !(self.mean_wind_speed >= 0.0 && self.mean_wind_speed.is_finite()) {
            return Err(DisturbanceError::InvalidParameter(format!(
                "dryden mean_wind_speed must be >= 0, got {}",
                self.mean_wind_speed
            )));
        }
        if !(self.altitude >= 0.0 && self.altitude.is_finite()) {
            return Err(DisturbanceError::InvalidParameter(format!(
                "dryden altitude must be >= 0, got {}",
                self.altitude
            )));
        }
        Ok(())
    }
}

fn default_ground_coeff() -> f64 {
    0.3
}
fn default_ground_height() -> f64 {
    0.3
}

/// Signal description as it appears in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalKind {
    Zero,
    Constant {
        value: f64,
    },
    /// Nine-term sinusoid with components up to 4 Hz and a 0.2 offset.
    CompositeSinusoid,
    Sinusoid {
        amplitude: f64,
        frequency_hz: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    DrydenWind(DrydenConfig),
    WhiteNoise {
        power: f64,
    },
    Scaled {
        signal: Box<SignalKind>,
        gain: f64,
    },
    Sum {
        signals: Vec<SignalKind>,
    },
    /// Inner signal at full strength inside an axis-aligned position box,
    /// zero outside.
    Gated {
        signal: Box<SignalKind>,
        min: Vec3,
        max: Vec3,
    },
    /// Synthetic altitude-dependent push `c * clamp(1 - z / z0, 0, 1)`.
    GroundEffect {
        #[serde(default = "default_ground_coeff")]
        coefficient: f64,
        #[serde(default = "default_ground_height")]
        reference_height: f64,
    },
}

impl SignalKind {
    pub fn is_stochastic(&self) -> bool {
        match self {
            SignalKind::DrydenWind(_) | SignalKind::WhiteNoise { .. } => true,
            SignalKind::Scaled { signal, .. } | SignalKind::Gated { signal, .. } => signal.is_stochastic(),
            SignalKind::Sum { signals } => signals.iter().any(SignalKind::is_stochastic),
            _ => false,
        }
    }

    /// True for signals that depend on the vehicle position.
    pub fn is_state_dependent(&self) -> bool {
        match self {
            SignalKind::Gated { .. } | SignalKind::GroundEffect { .. } => true,
            SignalKind::Scaled { signal, .. } => signal.is_state_dependent(),
            SignalKind::Sum { signals } => signals.iter().any(SignalKind::is_state_dependent),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<(), DisturbanceError> {
        let bad = |msg: String| Err(DisturbanceError::InvalidParameter(msg));
        match self {
            SignalKind::Constant { value } if !value.is_finite() => bad(format!("constant value {value}")),
            SignalKind::Sinusoid {
                amplitude,
                frequency_hz,
                phase,
                offset,
            } if ![amplitude, frequency_hz, phase, offset].iter().all(|v| v.is_finite()) => {
                bad("sinusoid parameters must be finite".into())
            }
            SignalKind::WhiteNoise { power } if !(*power >= 0.0 && power.is_finite()) => {
                bad(format!("white noise power must be >= 0, got {power}"))
            }
            SignalKind::DrydenWind(cfg) => cfg.validate(),
            SignalKind::Scaled { signal, gain } => {
                if !gain.is_finite() {
                    return bad(format!("scale gain {gain}"));
                }
                signal.validate()
            }
            SignalKind::Sum { signals } => signals.iter().try_for_each(SignalKind::validate),
            SignalKind::Gated { signal, .. } => signal.validate(),
            SignalKind::GroundEffect {
                coefficient,
                reference_height,
            } if !(coefficient.is_finite() && *reference_height > 0.0) => {
                bad("ground effect needs a finite coefficient and positive reference height".into())
            }
            _ => Ok(()),
        }
    }

    /// Evaluate a signal that depends on time only.
    pub fn eval_time(&self, t: f64) -> Result<Vec3, DisturbanceError> {
        Ok(match self {
            SignalKind::Zero => Vec3::zeros(),
            SignalKind::Constant { value } => Vec3::repeat(*value),
            SignalKind::CompositeSinusoid => Vec3::repeat(composite_sinusoid(t)),
            SignalKind::Sinusoid {
                amplitude,
                frequency_hz,
                phase,
                offset,
            } => Vec3::repeat(offset + amplitude * (2.0 * PI * frequency_hz * t + phase).sin()),
            SignalKind::Scaled { signal, gain } => signal.eval_time(t)? * *gain,
            SignalKind::Sum { signals } => {
                let mut acc = Vec3::zeros();
                for s in signals {
                    acc += s.eval_time(t)?;
                }
                acc
            }
            SignalKind::DrydenWind(_) => return Err(DisturbanceError::NonDifferentiable("dryden_wind")),
            SignalKind::WhiteNoise { .. } => return Err(DisturbanceError::NonDifferentiable("white_noise")),
            SignalKind::Gated { .. } => return Err(DisturbanceError::NonDifferentiable("gated")),
            SignalKind::GroundEffect { .. } => return Err(DisturbanceError::NonDifferentiable("ground_effect")),
        })
    }
}

/// Composite sinusoid with a 4 Hz top component.
pub fn composite_sinusoid(t: f64) -> f64 {
    0.05 * ((8.0 * PI * t).sin()
        + (2.5 * PI * (t - 3.0)).sin()
        + 1.5 * (2.0 * PI * (t + 7.0)).sin()
        + 2.0 * (0.4 * PI * (t - 9.0)).sin()
        + (0.2 * PI * t).sin()
        + 0.5 * (0.08 * PI * (t + 1.0)).sin()
        + (0.07 * PI * (t + 1.5)).sin()
        + 0.5 * (0.05 * PI * (t + 2.0)).sin()
        + 4.0)
}

/// Upper bound on `|composite_sinusoid(t)|` from the triangle inequality.
pub const COMPOSITE_SINUSOID_BOUND: f64 = 0.625;

/// One band-limited white noise sample: zero mean, variance `power / dt`.
pub fn white_noise<R: Rng + ?Sized>(power: f64, dt: f64, rng: &mut R) -> f64 {
    if power == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    z * (power / dt).sqrt()
}

/// `integral_0^T |d'(t)| dt` per component, by central differences and the
/// trapezoid rule.
pub fn derivative_l1(signal: &SignalKind, horizon: f64, dt: f64) -> Result<Vec3, DisturbanceError> {
    if !(dt > 0.0 && horizon >= 0.0) {
        return Err(DisturbanceError::InvalidParameter(format!(
            "derivative_l1 needs dt > 0 and horizon >= 0 (dt = {dt}, horizon = {horizon})"
        )));
    }
    let n = (horizon / dt).ceil().max(1.0) as usize;
    let h = horizon / n as f64;
    let rate = |t: f64| -> Result<Vec3, DisturbanceError> {
        Ok((signal.eval_time(t + h)? - signal.eval_time(t - h)?).abs() / (2.0 * h))
    };
    let mut acc = (rate(0.0)? + rate(horizon)?) * 0.5;
    for i in 1..n {
        acc += rate(i as f64 * h)?;
    }
    Ok(acc * h)
}

/// Discretised Dryden shaping filter for one axis.
///
/// Driven by band-limited white noise of unit spectral density (samples of
/// variance `1 / dt` held over the step). First-order filters use the
/// leading state only.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingFilter {
    pub phi: Matrix2<f64>,
    pub gamma: Vector2<f64>,
    pub output: RowVector2<f64>,
    state: Vector2<f64>,
}

impl ShapingFilter {
    /// `sigma sqrt(2 T) / (1 + T s)`.
    pub fn first_order(sigma: f64, time_constant: f64, dt: f64) -> Self {
        let tau = time_constant;
        let a = (-dt / tau).exp();
        Self {
            phi: Matrix2::new(a, 0.0, 0.0, a),
            gamma: Vector2::new(tau * (1.0 - a), 0.0),
            output: RowVector2::new(sigma * (2.0 * tau).sqrt() / tau, 0.0),
            state: Vector2::zeros(),
        }
    }

    /// `sigma sqrt(T) (1 + sqrt(3) T s) / (1 + T s)^2`.
    pub fn second_order(sigma: f64, time_constant: f64, dt: f64) -> Self {
        let tau = time_constant;
        let a = Matrix2::new(0.0, 1.0, -1.0 / (tau * tau), -2.0 / tau);
        // Zero-order-hold discretisation through the augmented exponential.
        let mut aug = Matrix3::zeros();
        aug.fixed_view_mut::<2, 2>(0, 0).copy_from(&(a * dt));
        aug[(1, 2)] = dt;
        let e = aug.exp();
        let k = sigma * tau.sqrt() / (tau * tau);
        Self {
            phi: e.fixed_view::<2, 2>(0, 0).into_owned(),
            gamma: e.fixed_view::<2, 1>(0, 2).into_owned(),
            output: RowVector2::new(k, k * 3f64.sqrt() * tau),
            state: Vector2::zeros(),
        }
    }

    /// Advance with one noise sample and return the new output.
    pub fn step(&mut self, noise: f64) -> f64 {
        self.state = self.phi * self.state + self.gamma * noise;
        (self.output * self.state)[0]
    }

    pub fn output(&self) -> f64 {
        (self.output * self.state)[0]
    }
}

/// Three-axis Dryden gust generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DrydenFilter {
    dt: f64,
    axes: Option<[ShapingFilter; 3]>,
}

impl DrydenFilter {
    pub fn new(cfg: &DrydenConfig, dt: f64) -> Self {
        if cfg.mean_wind_speed <= 0.0 {
            return Self { dt, axes: None };
        }
        let lengths = cfg.scale_lengths();
        let sigma = cfg.intensities();
        let v = cfg.mean_wind_speed;
        let axes = [
            ShapingFilter::first_order(sigma.x, lengths.x / v, dt),
            ShapingFilter::second_order(sigma.y, lengths.y / v, dt),
            ShapingFilter::second_order(sigma.z, lengths.z / v, dt),
        ];
        Self { dt, axes: Some(axes) }
    }

    pub fn axes(&self) -> Option<&[ShapingFilter; 3]> {
        self.axes.as_ref()
    }

    /// Advance one step and return the gust velocity `(u, v, w)` in m/s.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec3 {
        let dt = self.dt;
        match self.axes.as_mut() {
            None => Vec3::zeros(),
            Some(axes) => {
                let mut out = Vec3::zeros();
                for (i, f) in axes.iter_mut().enumerate() {
                    out[i] = f.step(white_noise(1.0, dt, rng));
                }
                out
            }
        }
    }
}

/// Seeded generator for one stochastic stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A signal routed onto a set of disturbance channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSource {
    pub signal: SignalKind,
    pub channels: Vec<Channel>,
    /// RNG stream id for stochastic signals. Defaults to the source's index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<u64>,
}

impl DisturbanceSource {
    pub fn new(signal: SignalKind, channels: &[Channel]) -> Self {
        Self {
            signal,
            channels: channels.to_vec(),
            stream: None,
        }
    }
}

/// Disturbance values at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceSample {
    /// Translational disturbance (m/s^2).
    pub d1: Vec3,
    /// Rotational disturbance (rad/s^2).
    pub d2: Vec3,
    pub t: f64,
}

impl DisturbanceSample {
    pub fn channel(&self, c: Channel) -> f64 {
        let i = c.index();
        if i < 3 {
            self.d1[i]
        } else {
            self.d2[i - 3]
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Pure(SignalKind),
    Noise {
        power: f64,
        dt: f64,
        rng: ChaCha8Rng,
        held: Vec3,
    },
    Dryden {
        filter: DrydenFilter,
        gain: Vec3,
        rng: ChaCha8Rng,
        held: Vec3,
    },
    Scaled(Box<Node>, f64),
    Sum(Vec<Node>),
    Gated(Box<Node>, Vec3, Vec3),
    Ground {
        coefficient: f64,
        reference_height: f64,
    },
}

impl Node {
    fn build(kind: &SignalKind, seed: u64, stream: u64, leaf: &mut u64, dt: f64) -> Node {
        // Sub-streams of one source: leaves are numbered depth first.
        let mut next_rng = || {
            let id = (stream << 16) | *leaf;
            *leaf += 1;
            stream_rng(seed, id)
        };
        match kind {
            SignalKind::WhiteNoise { power } => Node::Noise {
                power: *power,
                dt,
                rng: next_rng(),
                held: Vec3::zeros(),
            },
            SignalKind::DrydenWind(cfg) => Node::Dryden {
                filter: DrydenFilter::new(cfg, dt),
                gain: cfg.gain,
                rng: next_rng(),
                held: Vec3::zeros(),
            },
            SignalKind::Scaled { signal, gain } => {
                Node::Scaled(Box::new(Node::build(signal, seed, stream, leaf, dt)), *gain)
            }
            SignalKind::Sum { signals } => Node::Sum(
                signals
                    .iter()
                    .map(|s| Node::build(s, seed, stream, leaf, dt))
                    .collect(),
            ),
            SignalKind::Gated { signal, min, max } => {
                Node::Gated(Box::new(Node::build(signal, seed, stream, leaf, dt)), *min, *max)
            }
            SignalKind::GroundEffect {
                coefficient,
                reference_height,
            } => Node::Ground {
                coefficient: *coefficient,
                reference_height: *reference_height,
            },
            other => Node::Pure(other.clone()),
        }
    }

    fn advance(&mut self) {
        match self {
            Node::Noise { power, dt, rng, held } => {
                for i in 0..3 {
                    held[i] = white_noise(*power, *dt, rng);
                }
            }
            Node::Dryden {
                filter,
                gain,
                rng,
                held,
            } => {
                *held = filter.step(rng).component_mul(gain);
            }
            Node::Scaled(inner, _) | Node::Gated(inner, _, _) => inner.advance(),
            Node::Sum(nodes) => nodes.iter_mut().for_each(Node::advance),
            Node::Pure(_) | Node::Ground { .. } => {}
        }
    }

    fn eval(&self, t: f64, position: &Vec3) -> Vec3 {
        match self {
            Node::Pure(kind) => kind.eval_time(t).unwrap_or_else(|_| Vec3::zeros()),
            Node::Noise { held, .. } | Node::Dryden { held, .. } => *held,
            Node::Scaled(inner, gain) => inner.eval(t, position) * *gain,
            Node::Sum(nodes) => nodes.iter().map(|n| n.eval(t, position)).sum(),
            Node::Gated(inner, min, max) => {
                let inside = (0..3).all(|i| position[i] >= min[i] && position[i] <= max[i]);
                if inside {
                    inner.eval(t, position)
                } else {
                    Vec3::zeros()
                }
            }
            Node::Ground {
                coefficient,
                reference_height,
            } => Vec3::repeat(coefficient * (1.0 - position.z / reference_height).clamp(0.0, 1.0)),
        }
    }
}

/// Runtime instance of a scenario's disturbance sources.
#[derive(Debug, Clone)]
pub struct DisturbanceBank {
    routes: Vec<(Node, Vec<Channel>)>,
}

impl DisturbanceBank {
    pub fn new(sources: &[DisturbanceSource], seed: u64, dt: f64) -> Result<Self, DisturbanceError> {
        let mut routes = Vec::with_capacity(sources.len());
        for (i, src) in sources.iter().enumerate() {
            src.signal.validate()?;
            let stream = src.stream.unwrap_or(i as u64);
            let mut leaf = 0;
            routes.push((Node::build(&src.signal, seed, stream, &mut leaf, dt), src.channels.clone()));
        }
        Ok(Self { routes })
    }

    /// Draw new samples for every stochastic signal. Call once per step.
    pub fn advance(&mut self) {
        for (node, _) in &mut self.routes {
            node.advance();
        }
    }

    pub fn sample(&self, t: f64, position: &Vec3) -> DisturbanceSample {
        let mut out = DisturbanceSample {
            t,
            ..Default::default()
        };
        for (node, channels) in &self.routes {
            if channels.is_empty() {
                continue;
            }
            let v = node.eval(t, position);
            for &c in channels {
                let i = c.index();
                if i < 3 {
                    out.d1[i] += v[i];
                } else {
                    out.d2[i - 3] += v[i - 3];
                }
            }
        }
        out
    }
}

/// Per-channel `integral_0^T |d'|` for a set of time-only sources.
pub fn channel_derivative_l1(
    sources: &[DisturbanceSource],
    horizon: f64,
    dt: f64,
) -> Result<[f64; 6], DisturbanceError> {
    let mut per_channel: Vec<Vec<SignalKind>> = vec![Vec::new(); 6];
    for src in sources {
        for &c in &src.channels {
            per_channel[c.index()].push(src.signal.clone());
        }
    }
    let mut out = [0.0; 6];
    for (i, signals) in per_channel.into_iter().enumerate() {
        if signals.is_empty() {
            continue;
        }
        let combined = SignalKind::Sum { signals };
        out[i] = derivative_l1(&combined, horizon, dt)?[i % 3];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Term-by-term evaluation with the sines summed in extended order.
    fn composite_oracle(t: f64) -> f64 {
        let terms = [
            (1.0, 8.0 * PI * t),
            (1.0, 2.5 * PI * (t - 3.0)),
            (1.5, 2.0 * PI * (t + 7.0)),
            (2.0, 0.4 * PI * (t - 9.0)),
            (1.0, 0.2 * PI * t),
            (0.5, 0.08 * PI * (t + 1.0)),
            (1.0, 0.07 * PI * (t + 1.5)),
            (0.5, 0.05 * PI * (t + 2.0)),
        ];
        let mut vals: Vec<f64> = terms.iter().map(|(a, arg)| a * arg.sin()).collect();
        vals.push(4.0);
        vals.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
        0.05 * vals.iter().sum::<f64>()
    }

    #[test]
    fn composite_sinusoid_at_zero() {
        // Oracle value at t = 0: 0.05 * (0 + sin(-7.5 pi) + 1.5 sin(14 pi)
        // + 2 sin(-3.6 pi) + 0 + 0.5 sin(0.08 pi) + sin(0.105 pi)
        // + 0.5 sin(0.1 pi) + 4).
        let oracle = composite_oracle(0.0);
        assert_relative_eq!(oracle, 0.375244, epsilon = 5e-7);
        assert_relative_eq!(composite_sinusoid(0.0), oracle, epsilon = 1e-15);
    }

    #[test]
    fn composite_sinusoid_bounded_on_dense_grid() {
        let mut mean = 0.0;
        let n = 400_000;
        for i in 0..n {
            let t = i as f64 * 1e-3;
            let v = composite_sinusoid(t);
            assert!(v.abs() <= COMPOSITE_SINUSOID_BOUND);
            assert_relative_eq!(v, composite_oracle(t), epsilon = 1e-14);
            mean += v;
        }
        // Offset term contributes exactly 0.2; the long average hovers near it.
        assert!((mean / n as f64 - 0.2).abs() < 0.05);
    }

    #[test]
    fn white_noise_zero_power_is_silent() {
        let mut rng = stream_rng(1, 0);
        assert!((0..100).all(|_| white_noise(0.0, 0.002, &mut rng) == 0.0));
    }

    #[test]
    fn white_noise_variance_matches_power_over_dt() {
        let mut rng = stream_rng(42, 7);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = white_noise(0.01, 0.002, &mut rng);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var - 5.0).abs() <= 0.02 * 5.0, "variance {var}");
    }

    #[test]
    fn white_noise_reproducible() {
        let a: Vec<f64> = {
            let mut r = stream_rng(9, 3);
            (0..50).map(|_| white_noise(0.1, 0.002, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream_rng(9, 3);
            (0..50).map(|_| white_noise(0.1, 0.002, &mut r)).collect()
        };
        assert_eq!(a, b);
        let mut r = stream_rng(9, 4);
        assert_ne!(a[0], white_noise(0.1, 0.002, &mut r));
    }

    #[test]
    fn derivative_l1_cases() {
        let c = SignalKind::Constant { value: 3.0 };
        assert_eq!(derivative_l1(&c, 5.0, 1e-3).unwrap(), Vec3::zeros());
        let s = SignalKind::Sinusoid {
            amplitude: 1.0,
            frequency_hz: 1.0,
            phase: 0.0,
            offset: 0.0,
        };
        let tv = derivative_l1(&s, 1.0, 1e-3).unwrap();
        assert!((tv.x - 4.0).abs() < 1e-3, "{}", tv.x);
        let scaled = SignalKind::Scaled {
            signal: Box::new(s.clone()),
            gain: 2.5,
        };
        assert_relative_eq!(derivative_l1(&scaled, 1.0, 1e-3).unwrap().x, 2.5 * tv.x, max_relative = 1e-12);
        assert!(matches!(
            derivative_l1(&SignalKind::WhiteNoise { power: 0.1 }, 1.0, 1e-3),
            Err(DisturbanceError::NonDifferentiable(_))
        ));
        assert!(derivative_l1(&SignalKind::DrydenWind(DrydenConfig::default()), 1.0, 1e-3).is_err());
    }

    #[test]
    fn dryden_zero_wind_is_silent() {
        let cfg = DrydenConfig {
            mean_wind_speed: 0.0,
            ..Default::default()
        };
        let mut f = DrydenFilter::new(&cfg, 0.002);
        let mut rng = stream_rng(1, 1);
        assert!((0..1000).all(|_| f.step(&mut rng) == Vec3::zeros()));
    }

    #[test]
    fn dryden_reproducible() {
        let run = || {
            let mut f = DrydenFilter::new(&DrydenConfig::default(), 0.002);
            let mut rng = stream_rng(77, 2);
            (0..500).map(|_| f.step(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    /// Stationary output variance from the discrete coefficients, by
    /// iterating the Lyapunov recursion P = Phi P Phi^T + Gamma Gamma^T / dt.
    fn stationary_variance(f: &ShapingFilter, dt: f64) -> f64 {
        let q = f.gamma * f.gamma.transpose() / dt;
        let mut p = Matrix2::zeros();
        for _ in 0..2_000_000 {
            let next = f.phi * p * f.phi.transpose() + q;
            if (next - p).abs().max() <= 1e-18 {
                p = next;
                break;
            }
            p = next;
        }
        (f.output * p * f.output.transpose())[0]
    }

    #[test]
    fn dryden_sample_variance_matches_filter_oracle() {
        let dt = 0.002;
        let cfg = DrydenConfig {
            mean_wind_speed: 5.0,
            ..Default::default()
        };
        let mut f = DrydenFilter::new(&cfg, dt);
        let oracle: Vec<f64> = f.axes().unwrap().iter().map(|a| stationary_variance(a, dt)).collect();
        // The discrete filters reproduce the continuous intensities closely.
        let sigma = cfg.intensities();
        for i in 0..3 {
            assert_relative_eq!(oracle[i], sigma[i] * sigma[i], max_relative = 0.02);
        }
        let mut rng = stream_rng(2024, 11);
        // Burn-in of several time constants before collecting statistics.
        for _ in 0..20_000 {
            f.step(&mut rng);
        }
        let n = 1_000_000;
        let mut s = Vec3::zeros();
        let mut s2 = Vec3::zeros();
        for _ in 0..n {
            let g = f.step(&mut rng);
            s += g;
            s2 += g.component_mul(&g);
        }
        for i in 0..3 {
            let mean = s[i] / n as f64;
            let var = s2[i] / n as f64 - mean * mean;
            assert!((var - oracle[i]).abs() <= 0.1 * oracle[i], "axis {i}: {var} vs {}", oracle[i]);
        }
    }

    #[test]
    fn scale_lengths_follow_low_altitude_model() {
        let cfg = DrydenConfig {
            altitude: 100.0 * FT,
            mean_wind_speed: 10.0,
            ..Default::default()
        };
        let l = cfg.scale_lengths();
        assert_relative_eq!(l.z, 100.0 * FT, max_relative = 1e-12);
        assert_relative_eq!(l.x, 100.0 / (0.177 + 0.0823f64).powf(1.2) * FT, max_relative = 1e-12);
        let s = cfg.intensities();
        assert_relative_eq!(s.z, 1.0, max_relative = 1e-12);
        assert_relative_eq!(s.x, 1.0 / (0.177 + 0.0823f64).powf(0.4), max_relative = 1e-12);
    }

    #[test]
    fn bank_routes_and_gates() {
        let sources = vec![
            DisturbanceSource::new(SignalKind::Constant { value: 0.4 }, &[Channel::Z, Channel::Phi]),
            DisturbanceSource::new(
                SignalKind::Gated {
                    signal: Box::new(SignalKind::Constant { value: 1.0 }),
                    min: Vec3::new(-1.0, -1.0, 0.0),
                    max: Vec3::new(1.0, 1.0, 1.0),
                },
                &[Channel::X],
            ),
            DisturbanceSource::new(SignalKind::GroundEffect { coefficient: 0.3, reference_height: 0.3 }, &[Channel::Z]),
        ];
        let bank = DisturbanceBank::new(&sources, 0, 0.002).unwrap();
        let inside = bank.sample(0.0, &Vec3::new(0.0, 0.0, 0.15));
        assert_eq!(inside.d1.x, 1.0);
        assert_relative_eq!(inside.d1.z, 0.4 + 0.15, epsilon = 1e-15);
        assert_eq!(inside.d2, Vec3::new(0.4, 0.0, 0.0));
        let outside = bank.sample(0.0, &Vec3::new(2.0, 0.0, 0.5));
        assert_eq!(outside.d1, Vec3::new(0.0, 0.0, 0.4));
    }

    #[test]
    fn bank_streams_independent_of_other_sources() {
        let noise = DisturbanceSource {
            signal: SignalKind::WhiteNoise { power: 0.01 },
            channels: vec![Channel::X],
            stream: Some(5),
        };
        let collect = |sources: Vec<DisturbanceSource>| {
            let mut bank = DisturbanceBank::new(&sources, 3, 0.002).unwrap();
            (0..20)
                .map(|k| {
                    bank.advance();
                    bank.sample(k as f64 * 0.002, &Vec3::zeros()).d1.x
                })
                .collect::<Vec<_>>()
        };
        let alone = collect(vec![noise.clone()]);
        let with_other = collect(vec![
            DisturbanceSource::new(SignalKind::WhiteNoise { power: 1.0 }, &[Channel::Y]),
            noise,
        ]);
        assert_eq!(alone, with_other);
    }

    #[test]
    fn signal_json_shapes() {
        let s: SignalKind = serde_json::from_str(r#"{"kind":"dryden_wind","mean_wind_speed":2.0}"#).unwrap();
        assert!(matches!(s, SignalKind::DrydenWind(DrydenConfig { mean_wind_speed, .. }) if mean_wind_speed == 2.0));
        let bad = serde_json::from_str::<SignalKind>(r#"{"kind":"constant","value":1,"extra":2}"#);
        assert!(bad.is_err());
        let bad = serde_json::from_str::<SignalKind>(r#"{"kind":"dryden_wind","nope":2}"#);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn sum_is_linear(t in 0.0..100.0f64, a in -3.0..3.0f64) {
            let x = SignalKind::CompositeSinusoid;
            let y = SignalKind::Sinusoid { amplitude: a, frequency_hz: 0.3, phase: 0.1, offset: 0.0 };
            let sum = SignalKind::Sum { signals: vec![x.clone(), y.clone()] };
            let lhs = sum.eval_time(t).unwrap();
            let rhs = x.eval_time(t).unwrap() + y.eval_time(t).unwrap();
            prop_assert_eq!(lhs, rhs);
            prop_assert_eq!(x.eval_time(t).unwrap(), x.eval_time(t).unwrap());
            prop_assert!(composite_sinusoid(t).abs() <= COMPOSITE_SINUSOID_BOUND);
        }
    }
}
