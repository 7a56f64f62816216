//! RMS tables, estimation-bound checks and run statistics.

use hgdo_core::control::gain_check;
use hgdo_core::disturbance::channel_derivative_l1;
use hgdo_core::model::Vec3;
use hgdo_core::scenario::ObserverVariant;
use hgdo_core::{ScenarioConfig, SimTrace, TraceSample};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Step used by the derivative-L1 oracle when checking bounds.
pub const ORACLE_DT: f64 = 1e-3;
/// Slack added to the right-hand side of the L1 bound.
pub const BOUND_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trace has no samples in the requested window")]
    EmptyTrace,
    #[error("bound check needs deterministic disturbances; the scenario has stochastic elements")]
    StochasticDisturbance,
    #[error("bound check needs time-only disturbances; the scenario has position-dependent ones")]
    StateDependent,
    #[error("bound check needs an active observer")]
    NoObserver,
    #[error("derivative oracle failed: {0}")]
    Oracle(String),
}

/// One value per channel, in table order (x, y, z, psi, phi, theta).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelValues {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub phi: f64,
    pub theta: f64,
}

impl ChannelValues {
    pub const NAMES: [&'static str; 6] = ["x", "y", "z", "psi", "phi", "theta"];

    /// From an array in table order.
    pub fn from_table(v: [f64; 6]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
            psi: v[3],
            phi: v[4],
            theta: v[5],
        }
    }

    /// From an array in disturbance-channel order (x, y, z, phi, theta, psi).
    pub fn from_channels(v: [f64; 6]) -> Self {
        Self::from_table([v[0], v[1], v[2], v[5], v[3], v[4]])
    }

    pub fn to_table(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.psi, self.phi, self.theta]
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Time window for RMS figures: samples with `skip <= t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Window {
    pub skip: f64,
}

impl Window {
    pub fn whole() -> Self {
        Self::default()
    }

    pub fn skip(skip: f64) -> Self {
        Self { skip }
    }

    fn samples<'a>(&self, trace: &'a SimTrace) -> impl Iterator<Item = &'a TraceSample> + Clone {
        let skip = self.skip;
        trace.samples.iter().filter(move |s| s.t >= skip)
    }
}

/// Root mean square of `f` over the window.
pub fn rms_of(trace: &SimTrace, window: Window, f: impl Fn(&TraceSample) -> f64) -> Result<f64, MetricsError> {
    let (mut n, mut acc) = (0usize, 0.0);
    for s in window.samples(trace) {
        acc += f(s).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    Ok((acc / n as f64).sqrt())
}

/// Tracking-error RMS per channel.
pub fn rms_errors(trace: &SimTrace, window: Window) -> Result<ChannelValues, MetricsError> {
    let mut out = [0.0; 6];
    for (j, o) in out.iter_mut().enumerate() {
        *o = rms_of(trace, window, |s| s.tracking_error(j))?;
    }
    Ok(ChannelValues::from_table(out))
}

/// Disturbance-estimation-error RMS per channel.
pub fn estimation_rms(trace: &SimTrace, window: Window) -> Result<ChannelValues, MetricsError> {
    let mut out = [0.0; 6];
    for (j, o) in out.iter_mut().enumerate() {
        *o = rms_of(trace, window, |s| s.estimation_error(j))?;
    }
    Ok(ChannelValues::from_channels(out))
}

/// Population variance of the disturbance estimate per channel, after
/// removing its mean.
pub fn estimate_variance(trace: &SimTrace, window: Window) -> Result<ChannelValues, MetricsError> {
    let mut out = [0.0; 6];
    for (j, o) in out.iter_mut().enumerate() {
        let n = window.samples(trace).count();
        if n == 0 {
            return Err(MetricsError::EmptyTrace);
        }
        let mean = window.samples(trace).map(|s| s.estimate(j)).sum::<f64>() / n as f64;
        *o = window.samples(trace).map(|s| (s.estimate(j) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    Ok(ChannelValues::from_channels(out))
}

/// L1-bound check on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub channel: String,
    /// Trapezoid integral of `|d_tilde|`.
    pub lhs: f64,
    /// `eps |d_tilde(0)| + eps delta + slack`.
    pub rhs: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub pass: bool,
}

const CHANNEL_NAMES: [&str; 6] = ["x", "y", "z", "phi", "theta", "psi"];

/// Per-channel `integral |d_tilde| <= eps |d_tilde(0)| + eps delta + 1e-3`.
///
/// `epsilon` and `delta` are indexed in disturbance-channel order
/// (x, y, z, phi, theta, psi).
pub fn bound_check(trace: &SimTrace, epsilon: [f64; 6], delta: [f64; 6]) -> Result<Vec<BoundCheck>, MetricsError> {
    let first = trace.samples.first().ok_or(MetricsError::EmptyTrace)?;
    Ok((0..6)
        .map(|j| {
            let lhs: f64 = trace
                .samples
                .windows(2)
                .map(|w| 0.5 * (w[0].estimation_error(j).abs() + w[1].estimation_error(j).abs()) * (w[1].t - w[0].t))
                .sum();
            let rhs = epsilon[j] * first.estimation_error(j).abs() + epsilon[j] * delta[j] + BOUND_SLACK;
            BoundCheck {
                channel: CHANNEL_NAMES[j].to_string(),
                lhs,
                rhs,
                epsilon: epsilon[j],
                delta: delta[j],
                pass: lhs <= rhs,
            }
        })
        .collect())
}

/// Per-channel observer gains in disturbance-channel order.
pub fn channel_epsilons(cfg: &ScenarioConfig) -> Result<[f64; 6], MetricsError> {
    if cfg.observer.variant == ObserverVariant::None {
        return Err(MetricsError::NoObserver);
    }
    let (e1, e2) = (cfg.observer.epsilon1, cfg.observer.epsilon2);
    Ok([e1, e1, e1, e2, e2, e2])
}

/// Derivative-L1 oracle over the run horizon for a deterministic scenario.
pub fn scenario_delta(cfg: &ScenarioConfig, horizon: f64) -> Result<[f64; 6], MetricsError> {
    if cfg.is_stochastic() {
        return Err(MetricsError::StochasticDisturbance);
    }
    if cfg.disturbances.iter().any(|d| d.signal.is_state_dependent()) {
        return Err(MetricsError::StateDependent);
    }
    channel_derivative_l1(&cfg.disturbances, horizon, ORACLE_DT).map_err(|e| match e {
        hgdo_core::disturbance::DisturbanceError::NonDifferentiable(_) => MetricsError::StochasticDisturbance,
        other => MetricsError::Oracle(other.to_string()),
    })
}

/// Bound check with epsilon and delta taken from the scenario.
pub fn check_scenario_bounds(cfg: &ScenarioConfig, trace: &SimTrace) -> Result<Vec<BoundCheck>, MetricsError> {
    let eps = channel_epsilons(cfg)?;
    let horizon = trace.samples.last().ok_or(MetricsError::EmptyTrace)?.t;
    let delta = scenario_delta(cfg, horizon)?;
    bound_check(trace, eps, delta)
}

/// Switching-gain condition `k > eps (|d_tilde(0)| + delta)` on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCondition {
    pub channel: String,
    pub k: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Gain condition for every channel, in disturbance-channel order.
pub fn gain_report(cfg: &ScenarioConfig, d_tilde0: [f64; 6], delta: [f64; 6]) -> Result<Vec<GainCondition>, MetricsError> {
    let eps = channel_epsilons(cfg)?;
    let k = [cfg.gains.k1, cfg.gains.k2];
    let mut out = Vec::with_capacity(6);
    for (block, kv) in k.iter().enumerate() {
        let off = 3 * block;
        let d0 = Vec3::from_fn(|i, _| d_tilde0[off + i]);
        let dl = Vec3::from_fn(|i, _| delta[off + i]);
        let pass = gain_check(kv, eps[off], &d0, &dl);
        for i in 0..3 {
            out.push(GainCondition {
                channel: CHANNEL_NAMES[off + i].to_string(),
                k: kv[i],
                threshold: eps[off] * (d0[i].abs() + dl[i]),
                pass: pass[i],
            });
        }
    }
    Ok(out)
}

/// Sum of absolute sample-to-sample changes of `f`.
pub fn total_variation(trace: &SimTrace, f: impl Fn(&TraceSample) -> f64) -> f64 {
    trace.samples.windows(2).map(|w| (f(&w[1]) - f(&w[0])).abs()).sum()
}

/// Total variation of the collective thrust `u1`.
pub fn thrust_total_variation(trace: &SimTrace) -> f64 {
    total_variation(trace, |s| s.thrust)
}

/// Number of recorded samples with each limiter active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SaturationCounts {
    pub outer_limited: usize,
    pub torque_saturated: usize,
    pub rotor_saturated: usize,
}

pub fn saturation_counts(trace: &SimTrace) -> SaturationCounts {
    let count = |f: fn(&TraceSample) -> bool| trace.samples.iter().filter(|s| f(s)).count();
    SaturationCounts {
        outer_limited: count(|s| s.outer_limited),
        torque_saturated: count(|s| s.torque_saturated),
        rotor_saturated: count(|s| s.rotor_saturated),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub wall_seconds: f64,
    pub simulated_seconds: f64,
    pub samples: usize,
    pub substeps: u32,
}

/// How a run ended early, if it did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub t: f64,
    pub reason: String,
}

/// Everything reported for a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub scenario: String,
    /// The run includes a synthetic stand-in disturbance.
    pub synthetic: bool,
    pub rms_window_start: f64,
    pub rms_tracking: ChannelValues,
    pub rms_estimation: ChannelValues,
    pub bound_check: Option<Vec<BoundCheck>>,
    pub gain_check: Option<Vec<GainCondition>>,
    pub saturation: SaturationCounts,
    pub thrust_total_variation: f64,
    pub runtime: RuntimeStats,
    pub diverged: Option<Divergence>,
}

pub const METRICS_SCHEMA: &str = "hgdo-metrics/1";

impl MetricsReport {
    /// Build the report for `trace`. Bound and gain checks are included when
    /// the scenario is deterministic and has an observer.
    pub fn build(
        cfg: &ScenarioConfig,
        trace: &SimTrace,
        window: Window,
        wall_seconds: f64,
        diverged: Option<Divergence>,
    ) -> Result<Self, MetricsError> {
        let checks = match scenario_checks(cfg, trace) {
            Ok((b, g)) => (Some(b), Some(g)),
            Err(MetricsError::StochasticDisturbance | MetricsError::StateDependent | MetricsError::NoObserver) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(Self {
            schema: METRICS_SCHEMA.to_string(),
            scenario: cfg.name.clone(),
            synthetic: trace.synthetic,
            rms_window_start: window.skip,
            rms_tracking: rms_errors(trace, window)?,
            rms_estimation: estimation_rms(trace, window)?,
            bound_check: checks.0,
            gain_check: checks.1,
            saturation: saturation_counts(trace),
            thrust_total_variation: thrust_total_variation(trace),
            runtime: RuntimeStats {
                wall_seconds,
                simulated_seconds: trace.final_time,
                samples: trace.samples.len(),
                substeps: trace.substeps,
            },
            diverged,
        })
    }
}

fn scenario_checks(cfg: &ScenarioConfig, trace: &SimTrace) -> Result<(Vec<BoundCheck>, Vec<GainCondition>), MetricsError> {
    let eps = channel_epsilons(cfg)?;
    let first = trace.samples.first().ok_or(MetricsError::EmptyTrace)?;
    let horizon = trace.samples.last().map_or(0.0, |s| s.t);
    let delta = scenario_delta(cfg, horizon)?;
    let d0 = std::array::from_fn(|j| first.estimation_error(j));
    Ok((bound_check(trace, eps, delta)?, gain_report(cfg, d0, delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgdo_core::disturbance::{Channel, DisturbanceSource, SignalKind};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn trace_from(ts: &[f64], f: impl Fn(f64) -> f64) -> SimTrace {
        let samples = ts
            .iter()
            .map(|&t| {
                let mut s = TraceSample { t, ..Default::default() };
                s.e1 = Vec3::repeat(f(t));
                s.e2 = Vec3::repeat(f(t));
                s.d1_tilde = Vec3::repeat(f(t));
                s.d2_tilde = Vec3::repeat(f(t));
                s
            })
            .collect();
        SimTrace {
            samples,
            ..Default::default()
        }
    }

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn rms_cases() {
        let tr = trace_from(&grid(100, 0.01), |_| 0.1);
        for v in rms_errors(&tr, Window::whole()).unwrap().to_table() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        let tr = trace_from(&grid(100, 0.01), |_| 0.0);
        assert_eq!(rms_errors(&tr, Window::whole()).unwrap(), ChannelValues::default());
        // Whole periods of sin: 1000 samples over 10 periods.
        let n = 1000;
        let tr = trace_from(&grid(n, 2.0 * PI * 10.0 / n as f64), f64::sin);
        let r = rms_errors(&tr, Window::whole()).unwrap();
        assert!((r.x - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rms_errors(&SimTrace::default(), Window::whole()), Err(MetricsError::EmptyTrace));
        assert_eq!(rms_errors(&tr, Window::skip(1e6)), Err(MetricsError::EmptyTrace));
    }

    #[test]
    fn window_excludes_transient() {
        let tr = trace_from(&grid(200, 0.01), |t| if t < 1.0 { 5.0 } else { 0.2 });
        assert!((rms_errors(&tr, Window::skip(1.0)).unwrap().y - 0.2).abs() < 1e-15);
        assert!(rms_errors(&tr, Window::whole()).unwrap().y > 0.2);
    }

    #[test]
    fn channel_orders() {
        let c = ChannelValues::from_channels([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!((c.phi, c.theta, c.psi), (4.0, 5.0, 6.0));
        assert_eq!(c.to_table(), [1.0, 2.0, 3.0, 6.0, 4.0, 5.0]);
    }

    #[test]
    fn bound_check_on_exponential_decay() {
        // d_tilde = exp(-t / eps) with d_tilde(0) = 1, constant disturbance.
        let eps = 0.01;
        let dt = eps / 200.0;
        let tr = trace_from(&grid(4001, dt), |t| (-t / eps).exp());
        let rows = bound_check(&tr, [eps; 6], [0.0; 6]).unwrap();
        for r in rows {
            assert!((r.lhs - eps).abs() < 1e-6, "{}", r.lhs);
            assert!((r.rhs - (eps + BOUND_SLACK)).abs() < 1e-15);
            assert!(r.pass);
        }
        let zero = trace_from(&grid(10, 0.1), |_| 0.0);
        assert!(bound_check(&zero, [eps; 6], [0.0; 6]).unwrap().iter().all(|r| r.lhs == 0.0 && r.pass));
    }

    #[test]
    fn stochastic_scenarios_are_refused() {
        let mut cfg = ScenarioConfig::new(1.0);
        cfg.seed = Some(1);
        cfg.disturbances.push(DisturbanceSource::new(SignalKind::WhiteNoise { power: 0.1 }, &[Channel::X]));
        assert_eq!(scenario_delta(&cfg, 1.0), Err(MetricsError::StochasticDisturbance));
        let mut cfg = ScenarioConfig::new(1.0);
        cfg.disturbances.push(DisturbanceSource::new(SignalKind::GroundEffect { coefficient: 0.3, reference_height: 0.3 }, &[Channel::Z]));
        assert_eq!(scenario_delta(&cfg, 1.0), Err(MetricsError::StateDependent));
        let mut cfg = ScenarioConfig::new(1.0);
        cfg.observer = hgdo_core::scenario::ObserverConfig::none();
        assert_eq!(channel_epsilons(&cfg), Err(MetricsError::NoObserver));
    }

    #[test]
    fn gain_report_thresholds() {
        let mut cfg = ScenarioConfig::new(1.0);
        cfg.observer = hgdo_core::scenario::ObserverConfig::with_epsilon(0.01);
        let rows = gain_report(&cfg, [0.0; 6], [10.0; 6]).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| (r.threshold - 0.1).abs() < 1e-15 && r.pass));
        cfg.gains.k1 = Vec3::zeros();
        let rows = gain_report(&cfg, [1.0; 6], [0.0; 6]).unwrap();
        assert!(!rows[0].pass && rows[3].pass);
    }

    #[test]
    fn total_variation_and_counts() {
        let mut tr = trace_from(&grid(4, 1.0), |_| 0.0);
        for (s, u) in tr.samples.iter_mut().zip([0.0, 1.0, -1.0, -1.0]) {
            s.thrust = u;
            s.torque_saturated = u < 0.0;
        }
        assert_eq!(thrust_total_variation(&tr), 3.0);
        assert_eq!(saturation_counts(&tr).torque_saturated, 2);
    }

    proptest! {
        #[test]
        fn rms_time_reversal_and_scaling(values in proptest::collection::vec(-10.0f64..10.0, 1..60), a in -5.0f64..5.0) {
            let ts = grid(values.len(), 0.01);
            let tr = trace_from(&ts, |t| values[(t / 0.01).round() as usize]);
            let rev = trace_from(&ts, |t| values[values.len() - 1 - (t / 0.01).round() as usize]);
            let scaled = trace_from(&ts, |t| a * values[(t / 0.01).round() as usize]);
            let (r, rr, rs) = (
                rms_errors(&tr, Window::whole()).unwrap(),
                rms_errors(&rev, Window::whole()).unwrap(),
                rms_errors(&scaled, Window::whole()).unwrap(),
            );
            prop_assert!(r.x >= 0.0);
            prop_assert!((r.x - rr.x).abs() <= 1e-12 * (1.0 + r.x));
            prop_assert!((rs.x - a.abs() * r.x).abs() <= 1e-12 * (1.0 + rs.x));
        }
    }
}
