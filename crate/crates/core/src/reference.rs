//! Reference trajectories.

use crate::control::PositionRef;
use crate::model::Vec3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn default_period() -> f64 {
    40.0
}
fn default_height() -> f64 {
    0.5
}
fn default_ramp() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Figure-eight `(0.5 sin wt, sin wt cos wt, h)` with `w = 2 pi / period`.
    Lemniscate {
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_height")]
        height: f64,
    },
    /// Quintic move from `start` to `target` over `ramp_time`, then hold.
    Hover {
        target: Vec3,
        #[serde(default = "default_ramp")]
        ramp_time: f64,
        #[serde(default)]
        start: Vec3,
    },
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Lemniscate {
            period: default_period(),
            height: default_height(),
        }
    }
}

impl Reference {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Reference::Lemniscate { period, height } => {
                if !(*period > 0.0 && period.is_finite() && height.is_finite()) {
                    return Err(format!("lemniscate needs period > 0 and finite height, got {period}, {height}"));
                }
            }
            Reference::Hover {
                target,
                ramp_time,
                start,
            } => {
                if !(*ramp_time > 0.0 && ramp_time.is_finite()) {
                    return Err(format!("hover ramp_time must be > 0, got {ramp_time}"));
                }
                if !(target.iter().chain(start.iter()).all(|v| v.is_finite())) {
                    return Err("hover target and start must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Desired position, velocity and acceleration at `t`.
    pub fn eval(&self, t: f64) -> PositionRef {
        match *self {
            Reference::Lemniscate { period, height } => lemniscate_ref(t, period, height),
            Reference::Hover {
                target,
                ramp_time,
                start,
            } => hover_ref(t, &start, &target, ramp_time),
        }
    }

    /// Desired yaw. All rotational references are zero.
    pub fn yaw(&self, _t: f64) -> f64 {
        0.0
    }
}

pub fn lemniscate_ref(t: f64, period: f64, height: f64) -> PositionRef {
    let w = 2.0 * PI / period;
    // Reduce the phase first so the reference is exactly periodic.
    let phase = w * t.rem_euclid(period);
    let (s1, c1) = phase.sin_cos();
    let (s2, c2) = (2.0 * phase).sin_cos();
    PositionRef {
        pos: Vec3::new(0.5 * s1, s1 * c1, height),
        vel: Vec3::new(0.5 * w * c1, w * c2, 0.0),
        acc: Vec3::new(-0.5 * w * w * s1, -2.0 * w * w * s2, 0.0),
    }
}

pub fn hover_ref(t: f64, start: &Vec3, target: &Vec3, ramp_time: f64) -> PositionRef {
    let delta = target - start;
    if t >= ramp_time {
        return PositionRef {
            pos: *target,
            ..Default::default()
        };
    }
    let tau = t.max(0.0) / ramp_time;
    let (t2, t3) = (tau * tau, tau * tau * tau);
    let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
    let ds = 30.0 * t2 * (1.0 - tau) * (1.0 - tau);
    let dds = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau);
    PositionRef {
        pos: start + delta * s,
        vel: delta * (ds / ramp_time),
        acc: delta * (dds / (ramp_time * ramp_time)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn lemniscate_values() {
        let r = lemniscate_ref(0.0, 40.0, 0.5);
        assert_eq!(r.pos, Vec3::new(0.0, 0.0, 0.5));
        let r = lemniscate_ref(10.0, 40.0, 0.5);
        assert_relative_eq!(r.pos, Vec3::new(0.5, 0.0, 0.5), epsilon = 1e-15);
        // y equals half of sin(4 pi t / 40).
        let t = 7.3;
        let r = lemniscate_ref(t, 40.0, 0.5);
        assert_relative_eq!(r.pos.y, 0.5 * (4.0 * PI * t / 40.0).sin(), epsilon = 1e-15);
    }

    #[test]
    fn lemniscate_derivatives_match_differences() {
        let h = 1e-5;
        for &t in &[0.3, 5.0, 12.7, 33.3] {
            let r = lemniscate_ref(t, 40.0, 0.5);
            let (a, b) = (lemniscate_ref(t + h, 40.0, 0.5), lemniscate_ref(t - h, 40.0, 0.5));
            assert_relative_eq!(r.vel, (a.pos - b.pos) / (2.0 * h), epsilon = 1e-9);
            assert_relative_eq!(r.acc, (a.vel - b.vel) / (2.0 * h), epsilon = 1e-9);
        }
    }

    #[test]
    fn hover_endpoints_and_junction() {
        let target = Vec3::new(0.5, 0.5, 0.5);
        let r0 = hover_ref(0.0, &Vec3::zeros(), &target, 5.0);
        assert_eq!(r0.pos, Vec3::zeros());
        assert_eq!(r0.vel, Vec3::zeros());
        let r1 = hover_ref(5.0, &Vec3::zeros(), &target, 5.0);
        assert_eq!(r1.pos, target);
        assert_eq!(hover_ref(9.0, &Vec3::zeros(), &target, 5.0).pos, target);
        // Continuity of position, velocity and acceleration across the
        // junction: evaluate just before and at the end of the ramp.
        let before = hover_ref(5.0 - 1e-10, &Vec3::zeros(), &target, 5.0);
        assert!((before.pos - r1.pos).norm() <= 1e-9);
        assert!((before.vel - r1.vel).norm() <= 1e-9);
        assert!((before.acc - r1.acc).norm() <= 1e-9);
    }

    #[test]
    fn hover_derivatives_match_differences() {
        let target = Vec3::new(0.5, -0.2, 1.0);
        let h = 1e-6;
        for &t in &[0.1, 1.7, 2.5, 4.9] {
            let r = hover_ref(t, &Vec3::zeros(), &target, 5.0);
            let (a, b) = (hover_ref(t + h, &Vec3::zeros(), &target, 5.0), hover_ref(t - h, &Vec3::zeros(), &target, 5.0));
            assert_relative_eq!(r.vel, (a.pos - b.pos) / (2.0 * h), epsilon = 1e-8);
            assert_relative_eq!(r.acc, (a.vel - b.vel) / (2.0 * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn reference_json() {
        let r: Reference = serde_json::from_str(r#"{"kind":"hover","target":[0.5,0.5,0.5]}"#).unwrap();
        assert!(matches!(r, Reference::Hover { ramp_time, .. } if ramp_time == 5.0));
        assert!(serde_json::from_str::<Reference>(r#"{"kind":"lemniscate","radius":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn lemniscate_is_periodic(k in 0u32..400_000) {
            // Dyadic sample times keep t + 40 exactly representable.
            let t = k as f64 / 1024.0;
            prop_assert_eq!(lemniscate_ref(t, 40.0, 0.5), lemniscate_ref(t + 40.0, 40.0, 0.5));
        }
    }
}
