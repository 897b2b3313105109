//! Checkpoints, configuration files and metrics streams.

pub mod checkpoint;
pub mod config;
pub mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry};
pub use config::{load_config, parse_config, ExperimentConfig, OptimizerKind, RunConfig};
pub use metrics::{parse_metrics, read_metrics, MetricsRecord, MetricsWriter};
