//! Experiment harness: scenario configuration, measurement-log I/O,
//! trajectory metrics, the estimation pipeline, and the Monte Carlo driver.

pub mod config;
pub mod logfmt;
pub mod metrics;
pub mod montecarlo;
pub mod profiles;
pub mod run;

pub use config::{Mode, ScenarioConfig, XiInitialConfig};
pub use logfmt::{GroundTruth, LogHeader, MeasurementLog};
pub use metrics::{compute_metrics, interpolate_pose, Metrics};
pub use montecarlo::{run_montecarlo, MonteCarloReport};
pub use run::{
    resolve_xi_initial, run_batch_oracle, run_estimate, run_estimate_custom, run_estimate_with,
    simulate_log, xi_true_at, KeyframeRecord, RunResult,
};
