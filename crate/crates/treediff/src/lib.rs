//! Host-side companion to `treediff-core`: configuration files, checkpoints,
//! the staged training pipeline, benchmarks and ablations.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod io;
pub mod pipeline;

pub use treediff_core as core;
