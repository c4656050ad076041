//! Synthetic nighttime driving: ground truth, sensor streams and the full
//! localization pipeline, with trajectory metrics and Monte-Carlo runs.

pub mod io;
pub mod metrics;
pub mod montecarlo;
pub mod pipeline;
pub mod presets;
pub mod scenario;
pub mod sensors;
pub mod trajectory;
pub mod world;

pub use metrics::{compute_ate, Ate, StampedPose};
pub use pipeline::{run_pipeline, run_with_options, simulate_and_run, RunArtifacts, SimError, World};
pub use scenario::{PipelineOptions, Scenario};
