//! Configuration, file formats, statistics and stage drivers for the experiments.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod stats;
pub mod trajectory_file;

pub use config::{ExperimentConfig, Scale};
pub use stats::{RateRow, Stamp};
pub use trajectory_file::{Stage, TrajectoryFile};
