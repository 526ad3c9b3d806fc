//! Experiment harness: datasets, the instrumented training loop, sweeps,
//! analysis and persistence.

pub mod analysis;
pub mod config;
pub mod datasets;
pub mod error;
pub mod idx;
pub mod persist;
pub mod quadgrid;
pub mod sweep;
pub mod train;

pub use config::RunConfig;
pub use error::HarnessError;
pub use train::{run_training, MetricsRow, TrainingTrace};
