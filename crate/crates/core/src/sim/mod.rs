//! Scenario orchestration, traces and metrics.

pub mod baseline;
pub mod metrics;
pub mod noise;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use baseline::{run_baseline, BaselineResult};
pub use metrics::{compute_metrics, measurement_rate, Metrics};
pub use noise::{noise_sample, NoiseSource};
pub use runner::{run_scenario, run_trace, SimError, SimOutput, Simulator};
pub use scenario::{Scenario, ScenarioError, ScenarioFile};
pub use trace::{SimTrace, StepRecord, TraceMeta};
