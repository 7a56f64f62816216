//! Epsilon sweeps and paired comparisons.

use crate::metrics::{estimation_rms, rms_errors, ChannelValues, MetricsError, MetricsReport, Window};
use hgdo_core::scenario::{ObserverConfig, ObserverVariant};
use hgdo_core::{run_scenario, ScenarioConfig, SimError, SimTrace};
use serde::{Deserialize, Serialize};
use std::fmt::Write;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("variant `{label}`: {source}")]
    Sim {
        label: String,
        #[source]
        source: SimError,
    },
    #[error("variant `{label}`: {source}")]
    Metrics {
        label: String,
        #[source]
        source: MetricsError,
    },
}

impl SweepError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, SweepError::Sim { source: SimError::Diverged { .. }, .. })
    }
}

/// One configuration of the observer to run against the shared scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub observer: ObserverConfig,
}

impl Variant {
    pub fn epsilon(base: &ObserverConfig, eps: f64) -> Self {
        Self {
            label: format!("eps={eps}"),
            observer: ObserverConfig {
                epsilon1: eps,
                epsilon2: eps,
                variant: match base.variant {
                    ObserverVariant::None => ObserverVariant::Auxiliary,
                    v => v,
                },
                ..*base
            },
        }
    }

    pub fn smc_only() -> Self {
        Self {
            label: "smc-only".into(),
            observer: ObserverConfig::none(),
        }
    }
}

/// The variants of an epsilon sweep, optionally followed by SMC-only.
pub fn epsilon_variants(base: &ObserverConfig, epsilons: &[f64], smc_only: bool) -> Vec<Variant> {
    let mut v: Vec<Variant> = epsilons.iter().map(|&e| Variant::epsilon(base, e)).collect();
    if smc_only {
        v.push(Variant::smc_only());
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub label: String,
    pub observer: ObserverVariant,
    pub epsilon: Option<f64>,
    pub rms_tracking: ChannelValues,
    pub rms_estimation: ChannelValues,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub synthetic: bool,
    pub seed: Option<u64>,
    pub rms_window_start: f64,
    pub variants: Vec<VariantResult>,
}

/// Report plus the traces it was computed from, in variant order.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub traces: Vec<SimTrace>,
}

fn timed_run(cfg: &ScenarioConfig) -> (Result<SimTrace, SimError>, f64) {
    let start = Instant::now();
    let r = run_scenario(cfg);
    (r, start.elapsed().as_secs_f64())
}

/// Run every variant on `base` (same seed, disturbances and noise) in
/// parallel and tabulate RMS figures over `window`.
pub fn run_variants(base: &ScenarioConfig, variants: &[Variant], window: Window) -> Result<SweepOutcome, SweepError> {
    let configs: Vec<ScenarioConfig> = variants
        .iter()
        .map(|v| ScenarioConfig {
            observer: v.observer,
            name: format!("{} [{}]", base.name, v.label),
            ..base.clone()
        })
        .collect();
    let runs: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || timed_run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut results = Vec::with_capacity(runs.len());
    let mut traces = Vec::with_capacity(runs.len());
    for ((variant, (run, wall)), cfg) in variants.iter().zip(runs).zip(&configs) {
        let label = variant.label.clone();
        let trace = run.map_err(|source| SweepError::Sim { label: label.clone(), source })?;
        let metrics = |source| SweepError::Metrics { label: label.clone(), source };
        results.push(VariantResult {
            label: label.clone(),
            observer: cfg.observer.variant,
            epsilon: cfg.min_epsilon(),
            rms_tracking: rms_errors(&trace, window).map_err(metrics)?,
            rms_estimation: estimation_rms(&trace, window).map_err(metrics)?,
            wall_seconds: wall,
        });
        traces.push(trace);
    }
    Ok(SweepOutcome {
        report: SweepReport {
            scenario: base.name.clone(),
            synthetic: base.is_synthetic(),
            seed: base.seed,
            rms_window_start: window.skip,
            variants: results,
        },
        traces,
    })
}

pub fn sweep(base: &ScenarioConfig, epsilons: &[f64], smc_only: bool, window: Window) -> Result<SweepOutcome, SweepError> {
    run_variants(base, &epsilon_variants(&base.observer, epsilons, smc_only), window)
}

impl SweepReport {
    /// Tracking-RMS table: rows x, y, z, psi, phi, theta; one column per variant.
    pub fn table(&self) -> String {
        let mut out = String::new();
        if self.synthetic {
            out.push_str("note: scenario includes a synthetic disturbance\n");
        }
        let _ = write!(out, "{:<8}", "channel");
        for v in &self.variants {
            let _ = write!(out, " {:>14}", v.label);
        }
        out.push('\n');
        for (j, name) in ChannelValues::NAMES.iter().enumerate() {
            let _ = write!(out, "{name:<8}");
            for v in &self.variants {
                let _ = write!(out, " {:>14.6e}", v.rms_tracking.to_table()[j]);
            }
            out.push('\n');
        }
        out
    }
}

/// Metrics for two scenarios run side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub a: MetricsReport,
    pub b: MetricsReport,
}

impl CompareReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>14} {:>14} {:>10}", "channel", label(&self.a.scenario, "A"), label(&self.b.scenario, "B"), "B/A");
        let (a, b) = (self.a.rms_tracking.to_table(), self.b.rms_tracking.to_table());
        for (j, name) in ChannelValues::NAMES.iter().enumerate() {
            let ratio = if a[j] > 0.0 { b[j] / a[j] } else { f64::NAN };
            let _ = writeln!(out, "{name:<8} {:>14.6e} {:>14.6e} {ratio:>10.3}", a[j], b[j]);
        }
        out
    }
}

fn label<'a>(name: &'a str, fallback: &'a str) -> &'a str {
    if name.is_empty() {
        fallback
    } else {
        name
    }
}

/// Run two scenarios in parallel and report both.
pub fn compare(a: &ScenarioConfig, b: &ScenarioConfig, window: Window) -> Result<CompareReport, SweepError> {
    let (ra, rb) = std::thread::scope(|scope| {
        let ha = scope.spawn(|| timed_run(a));
        let hb = scope.spawn(|| timed_run(b));
        (ha.join().expect("simulation thread panicked"), hb.join().expect("simulation thread panicked"))
    });
    let report = |cfg: &ScenarioConfig, (run, wall): (Result<SimTrace, SimError>, f64), tag: &str| {
        let label = label(&cfg.name, tag).to_string();
        let trace = run.map_err(|source| SweepError::Sim { label: label.clone(), source })?;
        MetricsReport::build(cfg, &trace, window, wall, None).map_err(|source| SweepError::Metrics { label, source })
    };
    Ok(CompareReport {
        a: report(a, ra, "A")?,
        b: report(b, rb, "B")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgdo_core::disturbance::{Channel, DisturbanceSource, SignalKind};

    fn base(duration: f64) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(duration);
        cfg.name = "probe".into();
        cfg.disturbances.push(DisturbanceSource::new(SignalKind::CompositeSinusoid, &Channel::ALL));
        cfg
    }

    #[test]
    fn variant_construction() {
        let v = epsilon_variants(&ObserverConfig::none(), &[0.01, 0.04], true);
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].observer.variant, ObserverVariant::Auxiliary);
        assert_eq!(v[1].observer.epsilon2, 0.04);
        assert_eq!(v[2].observer.variant, ObserverVariant::None);
        assert_eq!(v[2].label, "smc-only");
    }

    #[test]
    fn single_variant_sweep_equals_direct_run() {
        let cfg = base(1.0);
        let out = sweep(&cfg, &[0.04], false, Window::whole()).unwrap();
        let mut direct_cfg = cfg.clone();
        direct_cfg.observer = ObserverConfig::with_epsilon(0.04);
        let direct = run_scenario(&direct_cfg).unwrap();
        assert_eq!(out.traces[0].samples, direct.samples);
        assert_eq!(out.report.variants[0].rms_tracking, rms_errors(&direct, Window::whole()).unwrap());
    }

    #[test]
    fn variants_share_the_disturbance_realisation() {
        let mut cfg = base(1.0);
        cfg.seed = Some(5);
        cfg.disturbances.push(DisturbanceSource::new(
            SignalKind::DrydenWind(Default::default()),
            &[Channel::X, Channel::Y, Channel::Z],
        ));
        let out = sweep(&cfg, &[0.01, 0.08], true, Window::whole()).unwrap();
        let d = |tr: &SimTrace| tr.samples.iter().map(|s| (s.d1, s.d2)).collect::<Vec<_>>();
        assert_eq!(d(&out.traces[0]), d(&out.traces[1]));
        assert_eq!(d(&out.traces[0]), d(&out.traces[2]));
        let table = out.report.table();
        assert_eq!(table.lines().count(), 7);
        assert!(table.contains("smc-only") && table.lines().nth(4).unwrap().starts_with("psi"));
    }

    #[test]
    fn compare_reports_both_sides() {
        let a = base(0.5);
        let mut b = base(0.5);
        b.observer = ObserverConfig::none();
        let r = compare(&a, &b, Window::whole()).unwrap();
        assert!(r.a.bound_check.is_some());
        assert!(r.b.bound_check.is_none());
        assert_eq!(r.table().lines().count(), 7);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = base(1.0);
        cfg.divergence_bound = 1e-6;
        let err = sweep(&cfg, &[0.01], false, Window::whole()).unwrap_err();
        assert!(err.is_divergence());
        assert!(err.to_string().contains("eps=0.01"));
    }
}
