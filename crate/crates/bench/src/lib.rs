//! Metrics, emitters, plots and sweeps for scenario runs.

pub mod emit;
pub mod metrics;
pub mod plot;
pub mod sweep;

pub use metrics::{ChannelValues, MetricsReport, Window};
pub use sweep::{compare, sweep, SweepReport};
