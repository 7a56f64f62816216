//! Quadrotor simulation with a high-gain disturbance observer and a
//! sliding-mode cascade controller.

pub mod control;
pub mod disturbance;
pub mod integrator;
pub mod model;
pub mod observer;
pub mod reference;
pub mod scenario;
pub mod sim;

pub use scenario::ScenarioConfig;
pub use sim::{run_scenario, SimError, SimTrace, TraceSample};
