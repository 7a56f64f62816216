//! Scenario configuration.

use crate::control::SmcGains;
use crate::disturbance::{DisturbanceSource, SignalKind};
use crate::model::{RigidState, Vec3, VehicleParams};
use crate::reference::Reference;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Value of the `schema` field understood by this version.
pub const SCHEMA_VERSION: &str = "hgdo-scenario/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema `{found}`, expected `{SCHEMA_VERSION}`")]
    Schema { found: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverVariant {
    #[default]
    Auxiliary,
    Naive,
    None,
}

/// Where the derivative-based observer gets its state derivative from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveDerivative {
    /// Exact plant derivative for noise-free loops, filtered differences of
    /// the measurements otherwise.
    #[default]
    Auto,
    Exact,
    Filtered,
}

fn default_eps() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default)]
    pub variant: ObserverVariant,
    #[serde(default = "default_eps")]
    pub epsilon1: f64,
    #[serde(default = "default_eps")]
    pub epsilon2: f64,
    #[serde(default)]
    pub naive_derivative: NaiveDerivative,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            variant: ObserverVariant::Auxiliary,
            epsilon1: default_eps(),
            epsilon2: default_eps(),
            naive_derivative: NaiveDerivative::Auto,
        }
    }
}

impl ObserverConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon1: epsilon,
            epsilon2: epsilon,
            ..Default::default()
        }
    }

    pub fn none() -> Self {
        Self {
            variant: ObserverVariant::None,
            ..Default::default()
        }
    }
}

/// Measurement-noise powers on the velocity and Euler-rate measurements.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub velocity: Vec3,
    #[serde(default)]
    pub attitude_rate: Vec3,
}

impl NoiseConfig {
    pub fn uniform(power: f64) -> Self {
        Self {
            velocity: Vec3::repeat(power),
            attitude_rate: Vec3::repeat(power),
        }
    }

    pub fn is_active(&self) -> bool {
        self.velocity.iter().chain(self.attitude_rate.iter()).any(|p| *p > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[default]
    Canonical,
    FullNonlinear,
}

fn default_schema() -> String {
    SCHEMA_VERSION.to_string()
}
fn default_dt() -> f64 {
    0.002
}
fn default_outer_divisor() -> u32 {
    1
}
fn default_record_every() -> u32 {
    1
}
fn default_divergence_bound() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub gains: SmcGains,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceSource>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub trajectory: Reference,
    /// Simulated time (s).
    pub duration: f64,
    /// Base step (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Outer loop runs every `outer_divisor` base steps.
    #[serde(default = "default_outer_divisor")]
    pub outer_divisor: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub plant: PlantKind,
    /// Route the wrench through rotor-speed allocation and back.
    #[serde(default)]
    pub allocation: bool,
    /// Defaults to the reference position and velocity at t = 0, level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<RigidState>,
    /// Record one sample every `record_every` base steps.
    #[serde(default = "default_record_every")]
    pub record_every: u32,
    /// Abort when any position component exceeds this magnitude (m).
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
}

impl ScenarioConfig {
    /// Default lemniscate scenario with the given duration and no disturbances.
    pub fn new(duration: f64) -> Self {
        Self {
            schema: default_schema(),
            name: String::new(),
            description: String::new(),
            vehicle: VehicleParams::default(),
            gains: SmcGains::default(),
            observer: ObserverConfig::default(),
            disturbances: Vec::new(),
            noise: NoiseConfig::default(),
            trajectory: Reference::default(),
            duration,
            dt: default_dt(),
            outer_divisor: default_outer_divisor(),
            seed: None,
            plant: PlantKind::Canonical,
            allocation: false,
            initial_state: None,
            record_every: default_record_every(),
            divergence_bound: default_divergence_bound(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn is_stochastic(&self) -> bool {
        self.noise.is_active() || self.disturbances.iter().any(|d| d.signal.is_stochastic())
    }

    /// True when any disturbance is a synthetic stand-in (ground effect).
    pub fn is_synthetic(&self) -> bool {
        fn has_ground(s: &SignalKind) -> bool {
            match s {
                SignalKind::GroundEffect { .. } => true,
                SignalKind::Scaled { signal, .. } | SignalKind::Gated { signal, .. } => has_ground(signal),
                SignalKind::Sum { signals } => signals.iter().any(has_ground),
                _ => false,
            }
        }
        self.disturbances.iter().any(|d| has_ground(&d.signal))
    }

    /// Smallest active observer gain, if any.
    pub fn min_epsilon(&self) -> Option<f64> {
        match self.observer.variant {
            ObserverVariant::None => None,
            _ => Some(self.observer.epsilon1.min(self.observer.epsilon2)),
        }
    }

    /// Integration sub-steps per base step so that `h <= eps / 20`.
    pub fn substeps(&self) -> u32 {
        match self.min_epsilon() {
            Some(eps) => ((self.dt * 20.0 / eps) * (1.0 - 1e-12)).ceil().max(1.0) as u32,
            None => 1,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema {
                found: self.schema.clone(),
            });
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt.is_finite() && self.dt <= self.duration) {
            return invalid(format!("dt must be in (0, duration], got {}", self.dt));
        }
        if self.outer_divisor == 0 || self.record_every == 0 {
            return invalid("outer_divisor and record_every must be >= 1".into());
        }
        if !(self.divergence_bound > 0.0) {
            return invalid(format!("divergence_bound must be > 0, got {}", self.divergence_bound));
        }
        if self.observer.variant != ObserverVariant::None {
            for eps in [self.observer.epsilon1, self.observer.epsilon2] {
                if !(eps > 0.0 && eps.is_finite()) {
                    return invalid(format!("observer epsilon must be > 0, got {eps}"));
                }
            }
        }
        if self.noise.velocity.iter().chain(self.noise.attitude_rate.iter()).any(|p| !(*p >= 0.0 && p.is_finite())) {
            return invalid("noise powers must be finite and >= 0".into());
        }
        if self.is_stochastic() && self.seed.is_none() {
            return invalid("a seed is required when noise or stochastic disturbances are present".into());
        }
        self.vehicle.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gains.validate(&self.vehicle).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.trajectory.validate().map_err(ConfigError::Invalid)?;
        for d in &self.disturbances {
            d.signal.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(s) = &self.initial_state {
            if !s.is_finite() {
                return invalid("initial_state must be finite".into());
            }
        }
        Ok(())
    }
}
